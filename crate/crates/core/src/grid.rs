//! Uniform discretization of the unit torus `[0,1)^d` and the discrete
//! Fourier transform on it.
//!
//! Nodes are stored with `x1` varying fastest. Spectral coefficients use the
//! same linear index, with the integer mode on each axis given by the usual
//! FFT ordering `0, 1, .., N/2-1, -N/2, .., -1`. The forward transform is
//! normalized by `N^d`, so a coefficient is the Fourier coefficient of the
//! trigonometric interpolant and `sum |c_m|^2` equals the nodal mean of `|f|^2`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;

#[derive(Clone)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n
    }
}

impl TorusGrid {
    /// `n` nodes per axis; `n` must be a power of two and at least 8.
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dimension must be 2 or 3, got {dim}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "nodes per axis must be a power of two >= 8, got {n}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            dim,
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total number of nodes, `N^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Per-axis integer indices of a linear node (or mode) index.
    #[inline]
    pub fn split_index(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        if self.dim == 2 {
            [idx % n, idx / n, 0]
        } else {
            [idx % n, (idx / n) % n, idx / (n * n)]
        }
    }

    #[inline]
    pub fn linear_index(&self, i: [usize; 3]) -> usize {
        if self.dim == 2 {
            i[0] + self.n * i[1]
        } else {
            i[0] + self.n * (i[1] + self.n * i[2])
        }
    }

    /// Coordinates of a node. The third coordinate is 0 in two dimensions.
    pub fn node(&self, idx: usize) -> [f64; 3] {
        let i = self.split_index(idx);
        let h = self.h();
        [i[0] as f64 * h, i[1] as f64 * h, i[2] as f64 * h]
    }

    /// Signed integer mode of an axis index (`-N/2` for the Nyquist index).
    #[inline]
    pub fn signed_mode(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Signed integer modes of a linear spectral index; absent axes give 0.
    pub fn mode(&self, idx: usize) -> [i64; 3] {
        let i = self.split_index(idx);
        let mut m = [0i64; 3];
        for (axis, slot) in m.iter_mut().enumerate().take(self.dim) {
            *slot = self.signed_mode(i[axis]);
        }
        m
    }

    #[inline]
    pub fn is_nyquist(&self, m: i64) -> bool {
        m == -(self.n as i64) / 2
    }

    /// Wavenumber used for first derivatives. The Nyquist mode of each axis is
    /// mapped to zero so that odd derivatives of real fields stay real.
    pub fn derivative_wavenumber(&self, idx: usize) -> [f64; 3] {
        let m = self.mode(idx);
        let mut k = [0.0; 3];
        for axis in 0..self.dim {
            if !self.is_nyquist(m[axis]) {
                k[axis] = TWO_PI * m[axis] as f64;
            }
        }
        k
    }

    /// Full wavenumber `2*pi*m`, Nyquist included.
    pub fn wavenumber(&self, idx: usize) -> [f64; 3] {
        let m = self.mode(idx);
        [
            TWO_PI * m[0] as f64,
            TWO_PI * m[1] as f64,
            TWO_PI * m[2] as f64,
        ]
    }

    /// Largest integer mode kept by the two-thirds rule.
    pub fn dealias_cutoff(&self) -> i64 {
        (self.n / 3) as i64
    }

    /// True when every axis mode satisfies `|m| <= N/3`.
    pub fn in_dealiased_band(&self, idx: usize) -> bool {
        let cut = self.dealias_cutoff();
        self.mode(idx).iter().all(|m| m.abs() <= cut)
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        assert_eq!(values.len(), self.len(), "field length does not match grid");
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, false);
        let scale = 1.0 / self.len() as f64;
        for c in &mut data {
            *c *= scale;
        }
        data
    }

    /// Inverse transform; the imaginary part is discarded.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.len(), "spectrum length does not match grid");
        let mut data = coeffs.to_vec();
        self.transform(&mut data, true);
        data.into_iter().map(|c| c.re).collect()
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let fft = if inverse { &self.inverse } else { &self.forward };
        let n = self.n;
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        // Axis 1 is contiguous.
        fft.process_with_scratch(data, &mut scratch);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for axis in 1..self.dim {
            let stride = n.pow(axis as u32);
            let block = stride * n;
            for start in (0..data.len()).step_by(block) {
                for offset in 0..stride {
                    let base = start + offset;
                    for (j, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + j * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (j, value) in line.iter().enumerate() {
                        data[base + j * stride] = *value;
                    }
                }
            }
        }
    }
}

/// Real values at the `N^d` nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &TorusGrid) -> Self {
        Self { data: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: &TorusGrid, value: f64) -> Self {
        Self { data: vec![value; grid.len()] }
    }

    pub fn zeros_like(other: &ScalarField) -> Self {
        Self { data: vec![0.0; other.len()] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self { data }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: &TorusGrid, f: impl Fn([f64; 3]) -> f64) -> Self {
        Self {
            data: (0..grid.len()).map(|i| f(grid.node(i))).collect(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Nodal mean, which on the unit torus is also the integral.
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.len(), other.len());
        Self {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self + s * other`
    pub fn add_scaled(&self, s: f64, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    /// Discrete `L^2` inner product (equal-weight quadrature).
    pub fn dot(&self, other: &Self) -> f64 {
        assert_eq!(self.len(), other.len());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum::<f64>() / self.len() as f64
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }
}

/// Three-component vector field. In two dimensions every component depends on
/// `(x1, x2)` only; the third component is kept so that curls are well formed.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    comps: [ScalarField; 3],
}

impl VectorField {
    pub fn zeros(grid: &TorusGrid) -> Self {
        Self::new(ScalarField::zeros(grid), ScalarField::zeros(grid), ScalarField::zeros(grid))
    }

    pub fn new(x: ScalarField, y: ScalarField, z: ScalarField) -> Self {
        assert!(x.len() == y.len() && y.len() == z.len(), "component lengths differ");
        Self { comps: [x, y, z] }
    }

    pub fn from_fn(grid: &TorusGrid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut out = Self::zeros(grid);
        for i in 0..grid.len() {
            let v = f(grid.node(i));
            for c in 0..3 {
                out.comps[c].data[i] = v[c];
            }
        }
        out
    }

    pub fn comps(&self) -> &[ScalarField; 3] {
        &self.comps
    }

    pub fn comps_mut(&mut self) -> &mut [ScalarField; 3] {
        &mut self.comps
    }

    pub fn into_comps(self) -> [ScalarField; 3] {
        self.comps
    }

    pub fn len(&self) -> usize {
        self.comps[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps[0].is_empty()
    }

    pub fn at(&self, idx: usize) -> [f64; 3] {
        [self.comps[0].data[idx], self.comps[1].data[idx], self.comps[2].data[idx]]
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().all(ScalarField::is_finite)
    }

    pub fn map_comps(&self, f: impl Fn(&ScalarField) -> ScalarField) -> Self {
        Self {
            comps: [f(&self.comps[0]), f(&self.comps[1]), f(&self.comps[2])],
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map_comps(|c| c.scaled(s))
    }

    pub fn add_scaled(&self, s: f64, other: &Self) -> Self {
        Self {
            comps: [
                self.comps[0].add_scaled(s, &other.comps[0]),
                self.comps[1].add_scaled(s, &other.comps[1]),
                self.comps[2].add_scaled(s, &other.comps[2]),
            ],
        }
    }

    /// Pointwise product with a scalar field.
    pub fn mul_scalar(&self, s: &ScalarField) -> Self {
        self.map_comps(|c| c.mul(s))
    }

    pub fn mean(&self) -> [f64; 3] {
        [self.comps[0].mean(), self.comps[1].mean(), self.comps[2].mean()]
    }

    pub fn dot(&self, other: &Self) -> f64 {
        (0..3).map(|c| self.comps[c].dot(&other.comps[c])).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// Nodal Euclidean magnitude.
    pub fn magnitude(&self) -> ScalarField {
        let n = self.len();
        ScalarField::from_vec(
            (0..n)
                .map(|i| {
                    let v = self.at(i);
                    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
                })
                .collect(),
        )
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitude().max()
    }
}

impl std::ops::Index<usize> for VectorField {
    type Output = ScalarField;
    fn index(&self, c: usize) -> &ScalarField {
        &self.comps[c]
    }
}

impl std::ops::IndexMut<usize> for VectorField {
    fn index_mut(&mut self, c: usize) -> &mut ScalarField {
        &mut self.comps[c]
    }
}
