//! Fourier-space differential operators, Leray projection, dealiasing,
//! mollification and grid norms on the periodic domain.
//!
//! First derivatives use [`TorusGrid::derivative_wavenumber`], which drops the
//! Nyquist mode; the Laplacian uses the full symbol `-|k|^2`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid, VectorField, TWO_PI};

pub type Spectrum = Vec<Complex64>;
pub type VectorSpectrum = [Spectrum; 3];

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub fn spectrum(grid: &TorusGrid, f: &ScalarField) -> Spectrum {
    grid.forward(f.as_slice())
}

pub fn field(grid: &TorusGrid, c: &[Complex64]) -> ScalarField {
    ScalarField::from_vec(grid.inverse(c))
}

pub fn vector_spectrum(grid: &TorusGrid, v: &VectorField) -> VectorSpectrum {
    [spectrum(grid, &v[0]), spectrum(grid, &v[1]), spectrum(grid, &v[2])]
}

pub fn vector_field(grid: &TorusGrid, c: &VectorSpectrum) -> VectorField {
    VectorField::new(field(grid, &c[0]), field(grid, &c[1]), field(grid, &c[2]))
}

pub fn zero_spectrum(grid: &TorusGrid) -> Spectrum {
    vec![Complex64::new(0.0, 0.0); grid.len()]
}

fn dot3(a: [f64; 3], b: [Complex64; 3]) -> Complex64 {
    b[0] * a[0] + b[1] * a[1] + b[2] * a[2]
}

pub fn gradient_hat(grid: &TorusGrid, f: &[Complex64]) -> VectorSpectrum {
    let mut out = [zero_spectrum(grid), zero_spectrum(grid), zero_spectrum(grid)];
    for (idx, c) in f.iter().enumerate() {
        let k = grid.derivative_wavenumber(idx);
        for axis in 0..3 {
            out[axis][idx] = I * k[axis] * c;
        }
    }
    out
}

pub fn divergence_hat(grid: &TorusGrid, v: &VectorSpectrum) -> Spectrum {
    (0..grid.len())
        .map(|idx| {
            let k = grid.derivative_wavenumber(idx);
            I * dot3(k, [v[0][idx], v[1][idx], v[2][idx]])
        })
        .collect()
}

pub fn curl_hat(grid: &TorusGrid, v: &VectorSpectrum) -> VectorSpectrum {
    let mut out = [zero_spectrum(grid), zero_spectrum(grid), zero_spectrum(grid)];
    for idx in 0..grid.len() {
        let k = grid.derivative_wavenumber(idx);
        let (a, b, c) = (v[0][idx], v[1][idx], v[2][idx]);
        out[0][idx] = I * (k[1] * c - k[2] * b);
        out[1][idx] = I * (k[2] * a - k[0] * c);
        out[2][idx] = I * (k[0] * b - k[1] * a);
    }
    out
}

pub fn gradient(grid: &TorusGrid, f: &ScalarField) -> VectorField {
    vector_field(grid, &gradient_hat(grid, &spectrum(grid, f)))
}

pub fn divergence(grid: &TorusGrid, v: &VectorField) -> ScalarField {
    field(grid, &divergence_hat(grid, &vector_spectrum(grid, v)))
}

pub fn curl(grid: &TorusGrid, v: &VectorField) -> VectorField {
    vector_field(grid, &curl_hat(grid, &vector_spectrum(grid, v)))
}

pub fn laplacian(grid: &TorusGrid, f: &ScalarField) -> ScalarField {
    let mut c = spectrum(grid, f);
    for (idx, value) in c.iter_mut().enumerate() {
        *value *= -k_squared(grid, idx);
    }
    field(grid, &c)
}

/// `|k|^2` with the full (Nyquist-inclusive) wavenumber.
#[inline]
pub fn k_squared(grid: &TorusGrid, idx: usize) -> f64 {
    let k = grid.wavenumber(idx);
    k[0] * k[0] + k[1] * k[1] + k[2] * k[2]
}

/// Velocity-gradient tensor `G[i][j] = d v_i / d x_j`.
pub fn gradient_tensor(grid: &TorusGrid, v: &VectorField) -> [[ScalarField; 3]; 3] {
    let hat = vector_spectrum(grid, v);
    gradient_tensor_hat(grid, &hat)
}

pub fn gradient_tensor_hat(grid: &TorusGrid, hat: &VectorSpectrum) -> [[ScalarField; 3]; 3] {
    let row = |i: usize| {
        let g = gradient_hat(grid, &hat[i]);
        let zero = || ScalarField::zeros(grid);
        let mut out = [zero(), zero(), zero()];
        for j in 0..grid.dim() {
            out[j] = field(grid, &g[j]);
        }
        out
    };
    [row(0), row(1), row(2)]
}

/// Leray projection applied in place on a vector spectrum. The mean mode is
/// left untouched.
pub fn leray_project_hat(grid: &TorusGrid, v: &mut VectorSpectrum) {
    for idx in 0..grid.len() {
        let k = grid.derivative_wavenumber(idx);
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if k2 == 0.0 {
            continue;
        }
        let kv = dot3(k, [v[0][idx], v[1][idx], v[2][idx]]) / k2;
        for axis in 0..3 {
            v[axis][idx] -= kv * k[axis];
        }
    }
}

pub fn leray_project(grid: &TorusGrid, v: &VectorField) -> VectorField {
    let mut hat = vector_spectrum(grid, v);
    leray_project_hat(grid, &mut hat);
    vector_field(grid, &hat)
}

/// Potential `q` (mean zero) of the gradient part of `v`: `v = P v + grad q`.
pub fn gradient_potential_hat(grid: &TorusGrid, v: &VectorSpectrum) -> Spectrum {
    (0..grid.len())
        .map(|idx| {
            let k = grid.derivative_wavenumber(idx);
            let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            if k2 == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                // grad q = i k q  =>  q = -i (k . v) / |k|^2
                -I * dot3(k, [v[0][idx], v[1][idx], v[2][idx]]) / k2
            }
        })
        .collect()
}

/// Zeroes every mode with some axis mode `|m| > N/3`.
pub fn dealias_in_place(grid: &TorusGrid, coeffs: &mut [Complex64]) {
    for (idx, c) in coeffs.iter_mut().enumerate() {
        if !grid.in_dealiased_band(idx) {
            *c = Complex64::new(0.0, 0.0);
        }
    }
}

pub fn dealias(grid: &TorusGrid, f: &ScalarField) -> ScalarField {
    let mut c = spectrum(grid, f);
    dealias_in_place(grid, &mut c);
    field(grid, &c)
}

pub fn dealias_vector(grid: &TorusGrid, v: &VectorField) -> VectorField {
    v.map_comps(|c| dealias(grid, c))
}

/// Pointwise product of two fields followed by two-thirds truncation.
pub fn dealiased_product(grid: &TorusGrid, a: &ScalarField, b: &ScalarField) -> ScalarField {
    dealias(grid, &a.mul(b))
}

/// Advective derivative `(a . grad) b`, truncated to the dealiased band,
/// returned as a spectrum.
pub fn advection_hat(grid: &TorusGrid, a: &VectorField, b_hat: &VectorSpectrum) -> VectorSpectrum {
    let mut out = [zero_spectrum(grid), zero_spectrum(grid), zero_spectrum(grid)];
    for c in 0..3 {
        let grad = gradient_hat(grid, &b_hat[c]);
        let mut acc = vec![0.0; grid.len()];
        for axis in 0..grid.dim() {
            if a[axis].as_slice().iter().all(|&v| v == 0.0) {
                continue;
            }
            let d = grid.inverse(&grad[axis]);
            for ((slot, &ai), &di) in acc.iter_mut().zip(a[axis].as_slice()).zip(&d) {
                *slot += ai * di;
            }
        }
        let mut hat = grid.forward(&acc);
        dealias_in_place(grid, &mut hat);
        out[c] = hat;
    }
    out
}

/// One-dimensional symbol of the periodized, normalized Gaussian kernel.
///
/// Summing the Gaussian symbol over all aliases of `m` makes the discrete
/// kernel the sampled periodic Gaussian, which is nonnegative and has unit
/// mass.
fn mollifier_symbol(n: usize, m: i64, delta: f64) -> f64 {
    let g = |m: f64| (-(delta * TWO_PI * m).powi(2) / 2.0).exp();
    let nf = n as f64;
    let sum_aliases = |m: i64| {
        let mut s = g(m as f64);
        for p in 1..64 {
            let a = g(m as f64 + p as f64 * nf);
            let b = g(m as f64 - p as f64 * nf);
            s += a + b;
            if a + b < 1e-300 {
                break;
            }
        }
        s
    };
    sum_aliases(m) / sum_aliases(0)
}

/// Friedrichs-type smoothing with the Gaussian symbol `exp(-delta^2 |k|^2 / 2)`.
pub fn mollify(grid: &TorusGrid, f: &ScalarField, delta: f64) -> Result<ScalarField> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!("mollifier width must be > 0, got {delta}")));
    }
    let n = grid.n();
    let table: Vec<f64> = (0..n)
        .map(|i| mollifier_symbol(n, grid.signed_mode(i), delta))
        .collect();
    let mut c = spectrum(grid, f);
    for (idx, value) in c.iter_mut().enumerate() {
        let i = grid.split_index(idx);
        let mut s = 1.0;
        for axis in 0..grid.dim() {
            s *= table[i[axis]];
        }
        *value *= s;
    }
    let mut out = field(grid, &c);
    // The symbol is 1 at m = 0, so the mean is exact up to round-off; restore
    // it bit-for-bit against the input.
    let shift = f.mean() - out.mean();
    out.as_mut_slice().iter_mut().for_each(|v| *v += shift);
    Ok(out)
}

pub fn mollify_vector(grid: &TorusGrid, v: &VectorField, delta: f64) -> Result<VectorField> {
    Ok(VectorField::new(
        mollify(grid, &v[0], delta)?,
        mollify(grid, &v[1], delta)?,
        mollify(grid, &v[2], delta)?,
    ))
}

/// Equal-weight quadrature `L^p` norm; `p = f64::INFINITY` gives the nodal max.
pub fn lp_norm(f: &ScalarField, p: f64) -> Result<f64> {
    lp_norm_of_values(f.as_slice(), p)
}

/// `L^p` norm of the pointwise Euclidean magnitude of a vector field.
pub fn vector_lp_norm(v: &VectorField, p: f64) -> Result<f64> {
    lp_norm_of_values(v.magnitude().as_slice(), p)
}

fn lp_norm_of_values(values: &[f64], p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::InvalidArgument(format!("L^p exponent must be >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(values.iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    let n = values.len() as f64;
    if p == 2.0 {
        return Ok((values.iter().map(|v| v * v).sum::<f64>() / n).sqrt());
    }
    let s = values.iter().map(|v| v.abs().powf(p)).sum::<f64>() / n;
    Ok(s.powf(1.0 / p))
}

pub fn l2_norm(f: &ScalarField) -> f64 {
    f.norm_sq().sqrt()
}

pub fn vector_l2_norm(v: &VectorField) -> f64 {
    v.norm_sq().sqrt()
}

/// `||grad v||_2^2 = sum_i ||grad v_i||_2^2`, evaluated in Fourier space.
pub fn grad_norm_sq(grid: &TorusGrid, v: &VectorField) -> f64 {
    vector_spectrum(grid, v).iter().map(|c| grad_norm_sq_hat(grid, c)).sum()
}

pub fn scalar_grad_norm_sq(grid: &TorusGrid, f: &ScalarField) -> f64 {
    grad_norm_sq_hat(grid, &spectrum(grid, f))
}

pub fn grad_norm_sq_hat(grid: &TorusGrid, c: &[Complex64]) -> f64 {
    c.iter()
        .enumerate()
        .map(|(idx, v)| {
            let k = grid.derivative_wavenumber(idx);
            (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) * v.norm_sqr()
        })
        .sum()
}

/// `||grad^2 v||_2^2` (all second partial derivatives), in Fourier space.
pub fn hessian_norm_sq(grid: &TorusGrid, v: &VectorField) -> f64 {
    vector_spectrum(grid, v)
        .iter()
        .map(|c| {
            c.iter()
                .enumerate()
                .map(|(idx, z)| {
                    let k = grid.derivative_wavenumber(idx);
                    let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
                    k2 * k2 * z.norm_sqr()
                })
                .sum::<f64>()
        })
        .sum()
}

/// Nodal maximum of the Frobenius norm of the spectral gradient of `v`.
pub fn linf_grad(grid: &TorusGrid, v: &VectorField) -> f64 {
    let g = gradient_tensor(grid, v);
    frobenius_max(grid.len(), &g)
}

pub(crate) fn frobenius_max(len: usize, g: &[[ScalarField; 3]; 3]) -> f64 {
    let mut best: f64 = 0.0;
    for idx in 0..len {
        let mut s = 0.0;
        for row in g {
            for entry in row {
                let v = entry.as_slice()[idx];
                s += v * v;
            }
        }
        best = best.max(s.sqrt());
    }
    best
}
