//! Initial-data presets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{ScalarField, TorusGrid, VectorField, TWO_PI};
use crate::spectral::{dealias_vector, leray_project};

/// `amplitude * (sin 2pi x1 cos 2pi x2, -cos 2pi x1 sin 2pi x2, 0)`
pub fn taylor_green(grid: &TorusGrid, amplitude: f64) -> VectorField {
    VectorField::from_fn(grid, |x| {
        let (a, b) = (TWO_PI * x[0], TWO_PI * x[1]);
        [amplitude * a.sin() * b.cos(), -amplitude * a.cos() * b.sin(), 0.0]
    })
}

/// Smooth microrotation with all three components and nonzero divergence.
pub fn microrotation_pattern(grid: &TorusGrid, amplitude: f64) -> VectorField {
    VectorField::from_fn(grid, |x| {
        let (a, b) = (TWO_PI * x[0], TWO_PI * x[1]);
        [
            amplitude * a.sin(),
            0.5 * amplitude * b.cos(),
            amplitude * a.sin() * b.sin(),
        ]
    })
}

/// Quintic smoothstep on `[0, 1]`.
fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (s * (6.0 * s - 15.0) + 10.0)
}

/// Density equal to `level` on a slab `|x1 - 1/2| <= width / 2`, exactly zero
/// (vacuum) beyond `width / 2 + transition`, and a C^2 ramp in between.
pub fn vacuum_plateau(grid: &TorusGrid, level: f64, width: f64, transition: f64) -> ScalarField {
    ScalarField::from_fn(grid, |x| {
        let d = (x[0] - 0.5).abs() - 0.5 * width;
        if d <= 0.0 {
            level
        } else if transition > 0.0 {
            level * (1.0 - smoothstep(d / transition))
        } else {
            0.0
        }
    })
}

/// Sharp indicator of the same slab; the rough counterpart of [`vacuum_plateau`].
pub fn square_plateau(grid: &TorusGrid, level: f64, width: f64) -> ScalarField {
    vacuum_plateau(grid, level, width, 0.0)
}

/// A real trigonometric polynomial with frozen random coefficients. Sampling
/// the same polynomial on different grids gives the same continuous function.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomTrig {
    terms: Vec<([i64; 3], f64, f64)>,
    constant: f64,
}

impl RandomTrig {
    /// Modes with `|m_j| <= degree` on each of the first `dim` axes, with
    /// coefficients uniform in `[-1, 1]` damped by `1 / (1 + |m|^2)`.
    pub fn new(dim: usize, degree: i64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut terms = Vec::new();
        let range = -degree..=degree;
        let third: Vec<i64> = if dim == 3 { range.clone().collect() } else { vec![0] };
        for &m3 in &third {
            for m2 in range.clone() {
                for m1 in range.clone() {
                    let m = [m1, m2, m3];
                    // one representative of each +-m pair
                    if m == [0, 0, 0] || [-m1, -m2, -m3] > m {
                        continue;
                    }
                    let damp = 1.0 / (1.0 + (m1 * m1 + m2 * m2 + m3 * m3) as f64);
                    let a = rng.gen_range(-1.0..1.0) * damp;
                    let b = rng.gen_range(-1.0..1.0) * damp;
                    terms.push((m, a, b));
                }
            }
        }
        let constant = rng.gen_range(-1.0..1.0);
        Self { terms, constant }
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let mut s = self.constant;
        for (m, a, b) in &self.terms {
            let phase = TWO_PI * (m[0] as f64 * x[0] + m[1] as f64 * x[1] + m[2] as f64 * x[2]);
            let (sn, cs) = phase.sin_cos();
            s += a * cs + b * sn;
        }
        s
    }

    pub fn sample(&self, grid: &TorusGrid) -> ScalarField {
        ScalarField::from_fn(grid, |x| self.eval(x))
    }
}

/// Random divergence-free velocity of unit-order size, scaled so that its
/// `L^2` norm equals `amplitude`.
pub fn random_solenoidal(grid: &TorusGrid, amplitude: f64, degree: i64, seed: u64) -> VectorField {
    let comps: Vec<ScalarField> = (0..3)
        .map(|c| {
            if c == 2 && grid.dim() == 2 {
                ScalarField::zeros(grid)
            } else {
                RandomTrig::new(grid.dim(), degree, seed.wrapping_add(c as u64 * 7919))
                    .with_constant(0.0)
                    .sample(grid)
            }
        })
        .collect();
    let mut it = comps.into_iter();
    let v = VectorField::new(it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
    let v = dealias_vector(grid, &leray_project(grid, &v));
    let norm = v.norm_sq().sqrt();
    if norm == 0.0 {
        return v;
    }
    v.scaled(amplitude / norm)
}

/// Random smooth vector field (no solenoidal constraint), `L^2` norm `amplitude`.
pub fn random_vector(grid: &TorusGrid, amplitude: f64, degree: i64, seed: u64) -> VectorField {
    let mut comps = (0..3).map(|c| {
        RandomTrig::new(grid.dim(), degree, seed.wrapping_add(104_729 + c as u64 * 31))
            .with_constant(0.0)
            .sample(grid)
    });
    let v = VectorField::new(comps.next().unwrap(), comps.next().unwrap(), comps.next().unwrap());
    let v = dealias_vector(grid, &v);
    let norm = v.norm_sq().sqrt();
    if norm == 0.0 {
        return v;
    }
    v.scaled(amplitude / norm)
}

/// Uniform random draw helper for sweeps that need a single scalar.
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}
