//! Direct evaluation of trigonometric interpolants at off-grid points.
//!
//! The cost is `O(modes)` per point. Coefficients are stored for `m1 >= 0`
//! only, using conjugate symmetry of real fields, with the factor two for
//! `m1 > 0` folded in.

use num_complex::Complex64;

use crate::grid::{ScalarField, TorusGrid, TWO_PI};
use crate::spectral::spectrum;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Band {
    /// Modes with every `|m_j| <= N/3`.
    Dealiased,
    /// All modes; the Nyquist coefficient is split evenly between `+-N/2`.
    Full,
}

#[derive(Clone, Debug)]
pub struct TrigInterpolant {
    dim: usize,
    max_mode: i64,
    /// One coefficient block per component, laid out `[m3][m2][m1]` with
    /// `m1 in 0..=M` and `m2, m3 in -M..=M` (`m3` absent in 2-D).
    comps: Vec<Vec<Complex64>>,
    /// Per component, the `(m2, m3)` rows holding a coefficient above
    /// `EPSILON * max |c|`, each trimmed to its last such `m1`.
    rows: Vec<Vec<Row>>,
    /// Largest `|m|` on any axis among the retained coefficients.
    reach: usize,
}

#[derive(Clone, Copy, Debug)]
struct Row {
    base: usize,
    len: usize,
    i2: usize,
    i3: usize,
}

impl TrigInterpolant {
    pub fn new(grid: &TorusGrid, fields: &[&ScalarField], band: Band) -> Self {
        let dim = grid.dim();
        let n = grid.n() as i64;
        let max_mode = match band {
            Band::Dealiased => grid.dealias_cutoff(),
            Band::Full => n / 2,
        };
        let w = (2 * max_mode + 1) as usize;
        let half = (max_mode + 1) as usize;
        let block = half * w * if dim == 3 { w } else { 1 };
        let mut comps = Vec::with_capacity(fields.len());
        for f in fields {
            let mut out = vec![Complex64::new(0.0, 0.0); block];
            if f.as_slice().iter().any(|&v| v != 0.0) {
                let c = spectrum(grid, f);
                for (idx, value) in c.iter().enumerate() {
                    let m = grid.mode(idx);
                    if m.iter().take(dim).any(|mj| mj.abs() > max_mode) {
                        continue;
                    }
                    // Nyquist modes are split between +-N/2.
                    let mut images: Vec<([i64; 3], f64)> = vec![(m, 1.0)];
                    for axis in 0..dim {
                        if grid.is_nyquist(m[axis]) {
                            let mut next = Vec::with_capacity(images.len() * 2);
                            for (mm, wgt) in images {
                                let mut flipped = mm;
                                flipped[axis] = -mm[axis];
                                next.push((mm, 0.5 * wgt));
                                next.push((flipped, 0.5 * wgt));
                            }
                            images = next;
                        }
                    }
                    for (mm, wgt) in images {
                        if mm[0] < 0 {
                            continue;
                        }
                        let fold = if mm[0] == 0 { 1.0 } else { 2.0 };
                        let slot = Self::slot(dim, max_mode, mm);
                        out[slot] += value * (wgt * fold);
                    }
                }
            }
            comps.push(out);
        }
        Self::with_rows(dim, max_mode, comps)
    }

    fn with_rows(dim: usize, max_mode: i64, comps: Vec<Vec<Complex64>>) -> Self {
        let half = (max_mode + 1) as usize;
        let w = (2 * max_mode + 1) as usize;
        let planes = if dim == 3 { w } else { 1 };
        let mut reach = 0usize;
        let rows = comps
            .iter()
            .map(|c| {
                let cut = f64::EPSILON * c.iter().fold(0.0f64, |a, z| a.max(z.norm()));
                let mut rows = Vec::new();
                for i3 in 0..planes {
                    for i2 in 0..w {
                        let base = half * (i2 + w * i3);
                        let Some(last) = c[base..base + half].iter().rposition(|z| z.norm() > cut) else {
                            continue;
                        };
                        let m2 = (i2 as i64 - max_mode).unsigned_abs() as usize;
                        let m3 = if dim == 3 { (i3 as i64 - max_mode).unsigned_abs() as usize } else { 0 };
                        reach = reach.max(last).max(m2).max(m3);
                        rows.push(Row { base, len: last + 1, i2, i3 });
                    }
                }
                rows
            })
            .collect();
        Self { dim, max_mode, comps, rows, reach }
    }

    #[inline]
    fn slot(dim: usize, max_mode: i64, m: [i64; 3]) -> usize {
        let w = (2 * max_mode + 1) as usize;
        let half = (max_mode + 1) as usize;
        let i1 = m[0] as usize;
        let i2 = (m[1] + max_mode) as usize;
        if dim == 2 {
            i1 + half * i2
        } else {
            let i3 = (m[2] + max_mode) as usize;
            i1 + half * (i2 + w * i3)
        }
    }

    pub fn components(&self) -> usize {
        self.comps.len()
    }

    /// `(1 - alpha) * a + alpha * b`, component by component.
    pub fn lerp(a: &Self, b: &Self, alpha: f64) -> Self {
        assert_eq!(a.dim, b.dim);
        assert_eq!(a.max_mode, b.max_mode);
        assert_eq!(a.comps.len(), b.comps.len());
        let comps = a
            .comps
            .iter()
            .zip(&b.comps)
            .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x * (1.0 - alpha) + y * alpha).collect())
            .collect();
        Self::with_rows(a.dim, a.max_mode, comps)
    }

    /// Evaluates every component at `x`, writing into `out`.
    pub fn eval_into(&self, x: [f64; 3], out: &mut [f64]) {
        let mm = self.max_mode as usize;
        let r = self.reach;
        // e_a[m] = exp(2 pi i m x_a) for |m| <= reach, stored at offset mm
        let powers = |t: f64| {
            let mut e = vec![Complex64::new(0.0, 0.0); 2 * mm + 1];
            e[mm] = Complex64::new(1.0, 0.0);
            for m in 1..=r {
                let (s, c) = (TWO_PI * m as f64 * t).sin_cos();
                e[mm + m] = Complex64::new(c, s);
                e[mm - m] = Complex64::new(c, -s);
            }
            e
        };
        let e1 = powers(x[0]);
        let e1 = &e1[mm..];
        let e2 = powers(x[1]);
        let e3 = if self.dim == 3 { powers(x[2]) } else { vec![Complex64::new(1.0, 0.0)] };
        for ((slot, coeffs), rows) in out.iter_mut().zip(&self.comps).zip(&self.rows) {
            let mut total = Complex64::new(0.0, 0.0);
            for row in rows {
                let mut acc = Complex64::new(0.0, 0.0);
                for (c, z1) in coeffs[row.base..row.base + row.len].iter().zip(e1) {
                    acc += c * z1;
                }
                total += acc * e2[row.i2] * e3[row.i3];
            }
            *slot = total.re;
        }
    }

    pub fn eval(&self, x: [f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.comps.len()];
        self.eval_into(x, &mut out);
        out
    }

    /// Evaluates component set at many points, returning one field per component.
    pub fn eval_points(&self, points: &[[f64; 3]]) -> Vec<ScalarField> {
        let nc = self.comps.len();
        let mut out = vec![vec![0.0; points.len()]; nc];
        let mut buf = vec![0.0; nc];
        for (p, x) in points.iter().enumerate() {
            self.eval_into(*x, &mut buf);
            for c in 0..nc {
                out[c][p] = buf[c];
            }
        }
        out.into_iter().map(ScalarField::from_vec).collect()
    }
}
