//! Time integration of the coupled system.
//!
//! Each step:
//! 1. Midpoint velocities `u~, w~` come from extrapolation of the two latest
//!    levels, or from a predictor pass when no history is available.
//! 2. Density is advected semi-Lagrangian along `u~`.
//! 3. `u` and `w` are advanced by Crank-Nicolson-type theta weighting of the
//!    viscous, angular-viscous and damping terms. Inertia uses the
//!    time-centred floored density `rho_m = max((rho^n + rho^{n+1}) / 2, rho_floor)`.
//!    Advection and the `2 chi curl` couplings are explicit at `u~, w~`.
//!    With variable density the implicit systems are symmetric positive
//!    definite on the band-limited (and, for `u`, solenoidal) space and are
//!    solved by preconditioned conjugate gradients; with constant density
//!    they are diagonal per mode.
//! 4. The pressure is the gradient potential of the remaining momentum
//!    forcing and is stored time-centred at `t^{n+1/2}`.
//!
//! All velocity and microrotation levels after the first step live in the
//! two-thirds band.

use num_complex::Complex64;

use crate::diagnostics::{DiagnosticsRow, Tracker};
use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid, VectorField};
use crate::spectral::{
    advection_hat, gradient_potential_hat, k_squared, l2_norm, vector_field, vector_spectrum,
    zero_spectrum, Spectrum, VectorSpectrum,
};
use crate::state::{check_admissibility, FluidState, Params};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Velocity magnitude treated as zero in the CFL formula.
pub const CFL_EPS: f64 = 1e-12;
/// Nodal velocity magnitude that signals blow-up.
pub const BLOWUP_VELOCITY: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DensityScheme {
    /// Cubic Lagrange interpolation at departure points, limited to the
    /// range of the enclosing cell, followed by clipping and mass repair.
    #[default]
    SemiLagrangianCubic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Time step cap.
    pub dt: f64,
    pub t_end: f64,
    pub cfl_target: f64,
    pub imex_theta: f64,
    /// Steps between snapshots; 0 disables snapshots after `t = 0`.
    pub snapshot_every: usize,
    /// `rho_floor = rho_floor_scale * rho_star`.
    pub rho_floor_scale: f64,
    /// Steps between diagnostics rows; 0 disables rows.
    pub csv_cadence: usize,
    pub density_scheme: DensityScheme,
    /// Relative residual target of the conjugate-gradient solves.
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 1.0,
            cfl_target: 0.5,
            imex_theta: 0.5,
            snapshot_every: 100,
            rho_floor_scale: 1e-6,
            csv_cadence: 1,
            density_scheme: DensityScheme::SemiLagrangianCubic,
            cg_tol: 1e-12,
            cg_max_iter: 500,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return bad(format!("t_end must be >= 0, got {}", self.t_end));
        }
        if !(self.cfl_target > 0.0 && self.cfl_target <= 0.5) {
            return bad(format!("cfl_target must lie in (0, 0.5], got {}", self.cfl_target));
        }
        if !(0.0..=1.0).contains(&self.imex_theta) {
            return bad(format!("imex_theta must lie in [0, 1], got {}", self.imex_theta));
        }
        if !(self.rho_floor_scale > 0.0 && self.rho_floor_scale < 1.0) {
            return bad(format!("rho_floor_scale must lie in (0, 1), got {}", self.rho_floor_scale));
        }
        if !(self.cg_tol > 0.0) || self.cg_max_iter == 0 {
            return bad("conjugate-gradient tolerance and iteration cap must be positive".into());
        }
        Ok(())
    }
}

/// `min(cap, cfl_target * h / max(||u||_inf, eps))`
pub fn stable_dt(grid: &TorusGrid, state: &FluidState, cfg: &SolverConfig) -> f64 {
    let umax = state.u.max_magnitude().max(CFL_EPS);
    (cfg.cfl_target * grid.h() / umax).min(cfg.dt)
}

/// Transported density with its bound-violation measurements.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityUpdate {
    pub rho: ScalarField,
    /// Largest amount by which the limited interpolant leaves `[0, rho*]`
    /// before the final clip.
    pub preclip_violation: f64,
    /// Same measure for the unlimited cubic interpolant.
    pub raw_overshoot: f64,
}

/// Cubic Lagrange weights at offsets `-1, 0, 1, 2` for fractional position `s`.
#[inline]
fn cubic_weights(s: f64) -> [f64; 4] {
    [
        -s * (s - 1.0) * (s - 2.0) / 6.0,
        (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
        -(s + 1.0) * s * (s - 2.0) / 2.0,
        (s + 1.0) * s * (s - 1.0) / 6.0,
    ]
}

/// Periodic tensor-product cubic interpolation of nodal data at a point.
/// Returns the interpolated value and the range of the `2^d` enclosing nodes.
struct Stencil {
    idx: [[usize; 4]; 3],
    w: [[f64; 4]; 3],
}

impl Stencil {
    fn new(grid: &TorusGrid, x: [f64; 3]) -> Self {
        let n = grid.n();
        let nf = n as f64;
        let mut idx = [[0usize; 4]; 3];
        let mut w = [[0.0; 4]; 3];
        for axis in 0..3 {
            if axis >= grid.dim() {
                idx[axis] = [0; 4];
                w[axis] = [0.0, 1.0, 0.0, 0.0];
                continue;
            }
            let p = x[axis] * nf;
            let base = p.floor();
            let s = p - base;
            let i0 = base as i64;
            for o in 0..4 {
                idx[axis][o] = (i0 - 1 + o as i64).rem_euclid(n as i64) as usize;
            }
            w[axis] = cubic_weights(s);
        }
        Self { idx, w }
    }

    fn eval(&self, grid: &TorusGrid, data: &[f64]) -> f64 {
        let n = grid.n();
        let (o3, r3) = if grid.dim() == 3 { (0..4, true) } else { (1..2, false) };
        let mut total = 0.0;
        for c in o3 {
            let off3 = if r3 { self.idx[2][c] * n * n } else { 0 };
            let w3 = self.w[2][c];
            let mut plane = 0.0;
            for b in 0..4 {
                let off2 = off3 + self.idx[1][b] * n;
                let mut row = 0.0;
                for a in 0..4 {
                    row += self.w[0][a] * data[off2 + self.idx[0][a]];
                }
                plane += self.w[1][b] * row;
            }
            total += w3 * plane;
        }
        total
    }

    /// Range of the nodes at offsets `0, 1` on every active axis.
    fn cell_range(&self, grid: &TorusGrid, data: &[f64]) -> (f64, f64) {
        let n = grid.n();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let third: &[usize] = if grid.dim() == 3 { &[1, 2] } else { &[1] };
        for &c in third {
            let off3 = if grid.dim() == 3 { self.idx[2][c] * n * n } else { 0 };
            for b in 1..3 {
                for a in 1..3 {
                    let v = data[off3 + self.idx[1][b] * n + self.idx[0][a]];
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        (lo, hi)
    }
}

/// Semi-Lagrangian transport `rho^{n+1}(x) = rho^n(x - dt u(x - dt u(x) / 2))`
/// with the velocity frozen over the step. The result is limited to the range
/// of the enclosing cell, clipped to `[0, rho_star]`, and its mass is restored
/// by rescaling the deviation from the mean.
pub fn advect_density(grid: &TorusGrid, rho: &ScalarField, u: &VectorField, dt: f64, rho_star: f64) -> DensityUpdate {
    let (lo, hi) = (rho.min(), rho.max());
    if lo == hi {
        return DensityUpdate { rho: rho.clone(), preclip_violation: 0.0, raw_overshoot: 0.0 };
    }
    let dim = grid.dim();
    let data = rho.as_slice();
    let mut out = vec![0.0; rho.len()];
    let mut violation: f64 = 0.0;
    let mut overshoot: f64 = 0.0;
    for (idx, slot) in out.iter_mut().enumerate() {
        let x = grid.node(idx);
        let v = u.at(idx);
        let mut mid = x;
        for a in 0..dim {
            mid[a] = x[a] - 0.5 * dt * v[a];
        }
        let st = Stencil::new(grid, mid);
        let mut dep = x;
        for a in 0..dim {
            dep[a] = x[a] - dt * st.eval(grid, u[a].as_slice());
        }
        let st = Stencil::new(grid, dep);
        let raw = st.eval(grid, data);
        overshoot = overshoot.max(-raw).max(raw - rho_star);
        let (clo, chi) = st.cell_range(grid, data);
        let limited = raw.clamp(clo, chi);
        violation = violation.max(-limited).max(limited - rho_star);
        *slot = limited.clamp(0.0, rho_star);
    }
    let mut rho_new = ScalarField::from_vec(out);
    repair_mass(&mut rho_new, rho.mean(), rho_star);
    DensityUpdate {
        rho: rho_new,
        preclip_violation: violation.max(0.0),
        raw_overshoot: overshoot.max(0.0),
    }
}

/// `rho <- M + s (rho - mean)` with the largest `s <= 1` keeping `0 <= rho <= rho_star`.
fn repair_mass(rho: &mut ScalarField, target: f64, rho_star: f64) {
    let mean = rho.mean();
    if mean == target {
        return;
    }
    let (lo, hi) = (rho.min(), rho.max());
    let mut s: f64 = 1.0;
    if lo < mean {
        s = s.min(target / (mean - lo));
    }
    if hi > mean {
        s = s.min((rho_star - target) / (hi - mean));
    }
    let s = s.max(0.0);
    for v in rho.as_mut_slice() {
        *v = (target + s * (*v - mean)).clamp(0.0, rho_star);
    }
}

/// Wavenumber tables shared by every step on one grid.
#[derive(Clone, Debug)]
struct Modes {
    k: Vec<[f64; 3]>,
    k2: Vec<f64>,
    band: Vec<bool>,
}

impl Modes {
    fn new(grid: &TorusGrid) -> Self {
        let len = grid.len();
        Self {
            k: (0..len).map(|i| grid.derivative_wavenumber(i)).collect(),
            k2: (0..len).map(|i| k_squared(grid, i)).collect(),
            band: (0..len).map(|i| grid.in_dealiased_band(i)).collect(),
        }
    }

    fn truncate(&self, v: &mut VectorSpectrum) {
        for (idx, &keep) in self.band.iter().enumerate() {
            if !keep {
                for c in v.iter_mut() {
                    c[idx] = ZERO;
                }
            }
        }
    }

    /// Two-thirds truncation followed by the Leray projection.
    fn project(&self, v: &mut VectorSpectrum) {
        for idx in 0..self.k.len() {
            if !self.band[idx] {
                for c in v.iter_mut() {
                    c[idx] = ZERO;
                }
                continue;
            }
            let k = self.k[idx];
            let kk = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
            if kk == 0.0 {
                continue;
            }
            let kv = (v[0][idx] * k[0] + v[1][idx] * k[1] + v[2][idx] * k[2]) / kk;
            for (axis, c) in v.iter_mut().enumerate() {
                c[idx] -= kv * k[axis];
            }
        }
    }
}

fn inner(a: &VectorSpectrum, b: &VectorSpectrum) -> f64 {
    let mut s = 0.0;
    for c in 0..3 {
        for (x, y) in a[c].iter().zip(&b[c]) {
            s += x.re * y.re + x.im * y.im;
        }
    }
    s
}

fn axpy(y: &mut VectorSpectrum, a: f64, x: &VectorSpectrum) {
    for c in 0..3 {
        for (yi, xi) in y[c].iter_mut().zip(&x[c]) {
            *yi += xi * a;
        }
    }
}

fn zero_vector_spectrum(grid: &TorusGrid) -> VectorSpectrum {
    [zero_spectrum(grid), zero_spectrum(grid), zero_spectrum(grid)]
}

fn is_zero(s: &Spectrum) -> bool {
    s.iter().all(|c| c.re == 0.0 && c.im == 0.0)
}

/// Nodal values of a spectrum, skipping identically zero components.
fn to_nodes(grid: &TorusGrid, v: &VectorSpectrum) -> [Vec<f64>; 3] {
    let conv = |s: &Spectrum| if is_zero(s) { vec![0.0; grid.len()] } else { grid.inverse(s) };
    [conv(&v[0]), conv(&v[1]), conv(&v[2])]
}

fn forward_nonzero(grid: &TorusGrid, f: &[f64]) -> Spectrum {
    if f.iter().all(|&v| v == 0.0) {
        zero_spectrum(grid)
    } else {
        grid.forward(f)
    }
}

/// Preconditioned conjugate gradients on spectra. Returns the iterate and
/// the iteration count; a zero right side returns zero immediately.
fn pcg(
    b: &VectorSpectrum,
    x0: VectorSpectrum,
    apply: impl Fn(&VectorSpectrum) -> VectorSpectrum,
    precond: impl Fn(&VectorSpectrum) -> VectorSpectrum,
    tol: f64,
    max_iter: usize,
) -> (VectorSpectrum, usize) {
    let bnorm = inner(b, b).sqrt();
    if bnorm == 0.0 {
        let mut x = x0;
        for c in x.iter_mut() {
            c.iter_mut().for_each(|v| *v = ZERO);
        }
        return (x, 0);
    }
    let mut x = x0;
    let ax = apply(&x);
    let mut r = b.clone();
    axpy(&mut r, -1.0, &ax);
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = inner(&r, &z);
    for it in 0..max_iter {
        if inner(&r, &r).sqrt() <= tol * bnorm {
            return (x, it);
        }
        let ap = apply(&p);
        let pap = inner(&p, &ap);
        if !(pap > 0.0) {
            return (x, it);
        }
        let alpha = rz / pap;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        z = precond(&r);
        let rz_new = inner(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for c in 0..3 {
            for (pi, zi) in p[c].iter_mut().zip(&z[c]) {
                *pi = zi + *pi * beta;
            }
        }
    }
    (x, max_iter)
}

/// Inputs of one velocity/microrotation solve.
#[derive(Clone, Debug)]
pub struct StepInputs<'a> {
    pub u: &'a VectorField,
    pub omega: &'a VectorField,
    /// Explicit midpoint velocity.
    pub u_mid: &'a VectorField,
    /// Explicit midpoint microrotation.
    pub omega_mid: &'a VectorField,
    /// Time-centred inertia density before flooring.
    pub rho_mid: &'a ScalarField,
    pub dt: f64,
    /// Initial guesses for the iterative solves.
    pub guess: Option<(&'a VectorField, &'a VectorField)>,
}

/// Result of one velocity/microrotation solve.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumUpdate {
    pub u: VectorField,
    pub omega: VectorField,
    /// Pressure at the half step, mean zero.
    pub p: ScalarField,
    pub cg_iterations: usize,
}

/// Implicit-explicit stepping engine bound to one grid. Holds the wavenumber
/// tables and the previous level used for midpoint extrapolation.
#[derive(Clone, Debug)]
pub struct Integrator {
    grid: TorusGrid,
    params: Params,
    cfg: SolverConfig,
    modes: Modes,
}

impl Integrator {
    pub fn new(grid: &TorusGrid, params: Params, cfg: SolverConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        Ok(Self {
            grid: grid.clone(),
            params,
            cfg,
            modes: Modes::new(grid),
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    fn rho_floor(&self) -> f64 {
        self.cfg.rho_floor_scale * self.params.rho_star
    }

    /// One theta-weighted solve for `(u^{n+1}, w^{n+1}, P^{n+1/2})`.
    pub fn momentum_microrotation_step(&self, inp: &StepInputs<'_>) -> Result<MomentumUpdate> {
        let g = &self.grid;
        let p = &self.params;
        let m = &self.modes;
        let dt = inp.dt;
        let theta = self.cfg.imex_theta;
        let floor = self.rho_floor();
        let rho_m: Vec<f64> = inp.rho_mid.as_slice().iter().map(|&r| r.max(floor)).collect();
        let (rmin, rmax) = rho_m.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
        let constant_density = rmin == rmax;

        let u_hat = vector_spectrum(g, inp.u);
        let w_hat = vector_spectrum(g, inp.omega);
        let um_hat = vector_spectrum(g, inp.u_mid);
        let wm_hat = vector_spectrum(g, inp.omega_mid);
        let adv_u = advection_hat(g, inp.u_mid, &um_hat);
        let adv_w = advection_hat(g, inp.u_mid, &wm_hat);
        let adv_u_nodes = to_nodes(g, &adv_u);
        let adv_w_nodes = to_nodes(g, &adv_w);

        // Inertial part of the right sides in physical space:
        // rho_m (u^n / dt - (u~ . grad) u~), and the same for w.
        let inertial = |level: &VectorField, adv: &[Vec<f64>; 3]| -> VectorSpectrum {
            let mut out = zero_vector_spectrum(g);
            for c in 0..3 {
                let lv = level[c].as_slice();
                if lv.iter().all(|&v| v == 0.0) && adv[c].iter().all(|&v| v == 0.0) {
                    continue;
                }
                let f: Vec<f64> = (0..g.len()).map(|i| rho_m[i] * (lv[i] / dt - adv[c][i])).collect();
                out[c] = g.forward(&f);
            }
            out
        };
        let mut rhs_u = inertial(inp.u, &adv_u_nodes);
        let mut rhs_w = inertial(inp.omega, &adv_w_nodes);

        // Pressure potential: gradient part of T[rho_m (u^n - u^{n+1}) / dt - rho_m N].
        // Stash the u^n-part now and subtract the u^{n+1}-part after the solve.
        let mut forcing_u = rhs_u.clone();
        m.truncate(&mut forcing_u);

        let curl_w = crate::spectral::curl_hat(g, &wm_hat);
        let curl_u = crate::spectral::curl_hat(g, &um_hat);
        let two_chi = 2.0 * p.chi;
        let nu = p.nu();
        for idx in 0..g.len() {
            let k = m.k[idx];
            let k2 = m.k2[idx];
            let kw = w_hat[0][idx] * k[0] + w_hat[1][idx] * k[1] + w_hat[2][idx] * k[2];
            for c in 0..3 {
                rhs_u[c][idx] += curl_w[c][idx] * two_chi - u_hat[c][idx] * ((1.0 - theta) * nu * k2);
                let explicit_w = w_hat[c][idx] * ((1.0 - theta) * (p.gamma * k2 + 4.0 * p.chi))
                    + kw * ((1.0 - theta) * p.kappa * k[c]);
                rhs_w[c][idx] += curl_u[c][idx] * two_chi - explicit_w;
            }
        }
        m.project(&mut rhs_u);
        m.truncate(&mut rhs_w);

        let guess = |v: Option<&VectorField>, fallback: &VectorSpectrum, project: bool| {
            let mut s = match v {
                Some(f) => vector_spectrum(g, f),
                None => fallback.clone(),
            };
            if project {
                m.project(&mut s);
            } else {
                m.truncate(&mut s);
            }
            s
        };

        let mut iterations = 0;
        let (u_new, w_new) = if constant_density {
            let rho = rmin;
            let mut un = rhs_u.clone();
            let mut wn = rhs_w.clone();
            for idx in 0..g.len() {
                let k = m.k[idx];
                let k2 = m.k2[idx];
                let a_u = rho / dt + theta * nu * k2;
                for c in un.iter_mut() {
                    c[idx] /= a_u;
                }
                perp_par_solve(&mut wn, idx, k, k2, |kk| rho / dt + theta * (p.gamma * kk + 4.0 * p.chi), |kk| {
                    rho / dt + theta * ((p.gamma + p.kappa) * kk + 4.0 * p.chi)
                });
            }
            (un, wn)
        } else {
            let rho_ref = rmax;
            let apply_mass = |x: &VectorSpectrum| -> VectorSpectrum {
                let nodes = to_nodes(g, x);
                let mut out = zero_vector_spectrum(g);
                for c in 0..3 {
                    if nodes[c].iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let f: Vec<f64> = nodes[c].iter().zip(&rho_m).map(|(v, r)| v * r / dt).collect();
                    out[c] = forward_nonzero(g, &f);
                }
                out
            };
            let apply_u = |x: &VectorSpectrum| {
                let mut y = apply_mass(x);
                m.project(&mut y);
                for idx in 0..g.len() {
                    let s = theta * nu * m.k2[idx];
                    for c in 0..3 {
                        y[c][idx] += x[c][idx] * s;
                    }
                }
                y
            };
            let pre_u = |r: &VectorSpectrum| {
                let mut z = r.clone();
                for idx in 0..g.len() {
                    let s = 1.0 / (rho_ref / dt + theta * nu * m.k2[idx]);
                    for c in z.iter_mut() {
                        c[idx] *= s;
                    }
                }
                z
            };
            let x0 = guess(inp.guess.map(|g| g.0), &u_hat, true);
            let (un, it_u) = pcg(&rhs_u, x0, apply_u, pre_u, self.cfg.cg_tol, self.cfg.cg_max_iter);

            let apply_w = |x: &VectorSpectrum| {
                let mut y = apply_mass(x);
                m.truncate(&mut y);
                for idx in 0..g.len() {
                    let k = m.k[idx];
                    let k2 = m.k2[idx];
                    let kx = x[0][idx] * k[0] + x[1][idx] * k[1] + x[2][idx] * k[2];
                    for c in 0..3 {
                        y[c][idx] += x[c][idx] * (theta * (p.gamma * k2 + 4.0 * p.chi)) + kx * (theta * p.kappa * k[c]);
                    }
                }
                y
            };
            let pre_w = |r: &VectorSpectrum| {
                let mut z = r.clone();
                for idx in 0..g.len() {
                    perp_par_solve(
                        &mut z,
                        idx,
                        m.k[idx],
                        m.k2[idx],
                        |kk| rho_ref / dt + theta * (p.gamma * kk + 4.0 * p.chi),
                        |kk| rho_ref / dt + theta * ((p.gamma + p.kappa) * kk + 4.0 * p.chi),
                    );
                }
                z
            };
            let x0 = guess(inp.guess.map(|g| g.1), &w_hat, false);
            let (wn, it_w) = pcg(&rhs_w, x0, apply_w, pre_w, self.cfg.cg_tol, self.cfg.cg_max_iter);
            iterations = it_u.max(it_w);
            (un, wn)
        };

        // forcing_u = T[rho_m u^n / dt - rho_m N]; subtract T[rho_m u^{n+1} / dt].
        let nodes = to_nodes(g, &u_new);
        for c in 0..3 {
            if nodes[c].iter().all(|&v| v == 0.0) {
                continue;
            }
            let f: Vec<f64> = nodes[c].iter().zip(&rho_m).map(|(v, r)| v * r / dt).collect();
            let s = g.forward(&f);
            for (a, b) in forcing_u[c].iter_mut().zip(&s) {
                *a -= b;
            }
        }
        m.truncate(&mut forcing_u);
        let q = gradient_potential_hat(g, &forcing_u);

        let u = vector_field(g, &u_new);
        let omega = vector_field(g, &w_new);
        let pressure = crate::spectral::field(g, &q);
        Ok(MomentumUpdate { u, omega, p: pressure, cg_iterations: iterations })
    }

    /// Density transport and momentum solve for one step with given midpoint
    /// fields.
    fn advance_with(
        &self,
        state: &FluidState,
        u_mid: &VectorField,
        omega_mid: &VectorField,
        dt: f64,
        guess: Option<(&VectorField, &VectorField)>,
    ) -> Result<(FluidState, StepInfo)> {
        let density = match self.cfg.density_scheme {
            DensityScheme::SemiLagrangianCubic => {
                advect_density(&self.grid, &state.rho, u_mid, dt, self.params.rho_star)
            }
        };
        let rho_mid = state.rho.scaled(0.5).add_scaled(0.5, &density.rho);
        let upd = self.momentum_microrotation_step(&StepInputs {
            u: &state.u,
            omega: &state.omega,
            u_mid,
            omega_mid,
            rho_mid: &rho_mid,
            dt,
            guess,
        })?;
        let next = FluidState {
            t: state.t + dt,
            rho: density.rho,
            u: upd.u,
            omega: upd.omega,
            p: upd.p,
        };
        let info = StepInfo {
            dt,
            preclip_violation: density.preclip_violation,
            raw_overshoot: density.raw_overshoot,
            cg_iterations: upd.cg_iterations,
        };
        Ok((next, info))
    }

    /// Self-starting step: a first-order predictor supplies the midpoint fields
    /// for the corrector.
    pub fn self_starting_step(&self, state: &FluidState, dt: f64) -> Result<(FluidState, StepInfo)> {
        let (pred, info0) = self.advance_with(state, &state.u, &state.omega, dt, None)?;
        let u_mid = state.u.scaled(0.5).add_scaled(0.5, &pred.u);
        let w_mid = state.omega.scaled(0.5).add_scaled(0.5, &pred.omega);
        let (next, mut info) = self.advance_with(state, &u_mid, &w_mid, dt, Some((&pred.u, &pred.omega)))?;
        info.cg_iterations = info.cg_iterations.max(info0.cg_iterations);
        Ok((next, info))
    }

    /// Step using the previous level `(u^{n-1}, w^{n-1})` separated by `dt_prev`
    /// for midpoint extrapolation.
    pub fn step_with_history(
        &self,
        state: &FluidState,
        prev_u: &VectorField,
        prev_omega: &VectorField,
        dt_prev: f64,
        dt: f64,
    ) -> Result<(FluidState, StepInfo)> {
        let c = dt / (2.0 * dt_prev);
        let u_mid = state.u.add_scaled(c, &state.u.add_scaled(-1.0, prev_u));
        let w_mid = state.omega.add_scaled(c, &state.omega.add_scaled(-1.0, prev_omega));
        let r = 1.0 + dt / dt_prev;
        let gu = state.u.add_scaled(r - 1.0, &state.u.add_scaled(-1.0, prev_u));
        let gw = state.omega.add_scaled(r - 1.0, &state.omega.add_scaled(-1.0, prev_omega));
        self.advance_with(state, &u_mid, &w_mid, dt, Some((&gu, &gw)))
    }
}

/// Divides mode `idx` of `v` by `a(|k|^2)` on the part perpendicular to `k`
/// and by `b(|k|^2)` on the part parallel to `k`.
#[inline]
fn perp_par_solve(
    v: &mut VectorSpectrum,
    idx: usize,
    k: [f64; 3],
    k2: f64,
    a: impl Fn(f64) -> f64,
    b: impl Fn(f64) -> f64,
) {
    let kk = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
    let (ia, ib) = (1.0 / a(k2), 1.0 / b(k2));
    if kk == 0.0 {
        for c in v.iter_mut() {
            c[idx] *= ia;
        }
        return;
    }
    let kv = (v[0][idx] * k[0] + v[1][idx] * k[1] + v[2][idx] * k[2]) / kk;
    for (axis, c) in v.iter_mut().enumerate() {
        let par = kv * k[axis];
        c[idx] = (c[idx] - par) * ia + par * ib;
    }
}

/// Per-step bookkeeping.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepInfo {
    pub dt: f64,
    pub preclip_violation: f64,
    pub raw_overshoot: f64,
    pub cg_iterations: usize,
}

/// Projects `u*` onto solenoidal fields. The removed gradient `grad phi`
/// yields the pressure increment `phi / dt` (mean zero).
pub fn pressure_project(grid: &TorusGrid, u_star: &VectorField, dt: f64) -> (VectorField, ScalarField) {
    let mut hat = vector_spectrum(grid, u_star);
    let phi = gradient_potential_hat(grid, &hat);
    crate::spectral::leray_project_hat(grid, &mut hat);
    let inc: Spectrum = phi.iter().map(|c| c / dt).collect();
    (vector_field(grid, &hat), crate::spectral::field(grid, &inc))
}

/// Stateless single step of length `min(cfg.dt, cfl-limit)`.
pub fn step(grid: &TorusGrid, state: &FluidState, params: &Params, cfg: &SolverConfig) -> Result<FluidState> {
    let integ = Integrator::new(grid, *params, *cfg)?;
    let dt = stable_dt(grid, state, cfg);
    let (next, _) = integ.self_starting_step(state, dt)?;
    check_finite(&next, 1)?;
    Ok(next)
}

fn check_finite(state: &FluidState, step: usize) -> Result<()> {
    let reason = if !state.is_finite() {
        Some("non-finite values".to_string())
    } else {
        let umax = state.u.max_magnitude().max(state.omega.max_magnitude());
        (umax > BLOWUP_VELOCITY).then(|| format!("nodal magnitude {umax} exceeds {BLOWUP_VELOCITY}"))
    };
    match reason {
        Some(reason) => Err(Error::BlowUp { step, t: state.t, reason }),
        None => Ok(()),
    }
}

/// Receives diagnostics rows and snapshots during [`run`].
pub trait RunObserver {
    fn on_row(&mut self, _row: &DiagnosticsRow) -> Result<()> {
        Ok(())
    }

    /// `index` counts snapshots from 0 (the initial state).
    fn on_snapshot(&mut self, _index: usize, _step: usize, _state: &FluidState) -> Result<()> {
        Ok(())
    }
}

/// Observer that discards everything.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullObserver;

impl RunObserver for NullObserver {}

/// Observer that keeps snapshots in memory.
#[derive(Clone, Debug, Default)]
pub struct SnapshotCollector {
    pub snapshots: Vec<FluidState>,
}

impl RunObserver for SnapshotCollector {
    fn on_snapshot(&mut self, _index: usize, _step: usize, state: &FluidState) -> Result<()> {
        self.snapshots.push(state.clone());
        Ok(())
    }
}

/// Extremes observed over every step of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunStats {
    pub steps: usize,
    pub snapshots: usize,
    pub max_div_u: f64,
    pub min_rho: f64,
    pub max_rho: f64,
    pub max_preclip_violation: f64,
    pub max_raw_overshoot: f64,
    /// `max |M(t) - M(0)| / M(0)`.
    pub max_mass_drift: f64,
    /// `max (E^n - E^{n-1})`, negative when energy always decreases.
    pub max_energy_increase: f64,
    pub max_abs_energy_residual: f64,
    pub max_cg_iterations: usize,
    /// Cumulative dissipation `int_0^T D dt`.
    pub dissipated: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub state: FluidState,
    pub series: Vec<DiagnosticsRow>,
    pub stats: RunStats,
}

/// Advances `state0` to `cfg.t_end`. Rows go to `observer` and `series` every
/// `csv_cadence` steps; snapshots every `snapshot_every` steps and at `t = 0`.
pub fn run(
    grid: &TorusGrid,
    state0: &FluidState,
    params: &Params,
    cfg: &SolverConfig,
    observer: &mut dyn RunObserver,
) -> Result<RunOutput> {
    let integ = Integrator::new(grid, *params, *cfg)?;
    let report = check_admissibility(grid, state0, params);
    if !report.passed() {
        return Err(Error::Inadmissible(report.to_string()));
    }
    let mass0 = state0.mass();
    let mut stats = RunStats {
        steps: 0,
        snapshots: 1,
        max_div_u: l2_norm(&crate::spectral::divergence(grid, &state0.u)),
        min_rho: state0.rho.min(),
        max_rho: state0.rho.max(),
        max_preclip_violation: 0.0,
        max_raw_overshoot: 0.0,
        max_mass_drift: 0.0,
        max_energy_increase: f64::NEG_INFINITY,
        max_abs_energy_residual: 0.0,
        max_cg_iterations: 0,
        dissipated: 0.0,
    };
    observer.on_snapshot(0, 0, state0)?;
    let mut tracker = Tracker::new(grid, *params, state0);
    let mut series = Vec::new();
    let mut state = state0.clone();
    let mut prev: Option<(VectorField, VectorField, f64)> = None;
    let t_end = cfg.t_end;
    let mut step_no = 0usize;
    while t_end - state.t > 1e-9 * cfg.dt {
        let mut dt = stable_dt(grid, &state, cfg);
        let remaining = t_end - state.t;
        let last = remaining <= dt * (1.0 + 1e-9);
        if last {
            dt = remaining;
        }
        step_no += 1;
        let (mut next, info) = match &prev {
            None => integ.self_starting_step(&state, dt)?,
            Some((pu, pw, pdt)) => integ.step_with_history(&state, pu, pw, *pdt, dt)?,
        };
        if last {
            next.t = t_end;
        }
        check_finite(&next, step_no)?;
        let row = tracker.record(grid, &state, &next, info.preclip_violation);

        stats.steps = step_no;
        stats.max_div_u = stats.max_div_u.max(row.div_u_l2);
        stats.min_rho = stats.min_rho.min(row.rho_min);
        stats.max_rho = stats.max_rho.max(row.rho_max);
        stats.max_preclip_violation = stats.max_preclip_violation.max(info.preclip_violation);
        stats.max_raw_overshoot = stats.max_raw_overshoot.max(info.raw_overshoot);
        stats.max_mass_drift = stats.max_mass_drift.max(((row.mass - mass0) / mass0).abs());
        stats.max_energy_increase = stats.max_energy_increase.max(row.energy - state.kinetic_energy());
        stats.max_abs_energy_residual = stats.max_abs_energy_residual.max(row.energy_residual.abs());
        stats.max_cg_iterations = stats.max_cg_iterations.max(info.cg_iterations);

        if cfg.csv_cadence > 0 && step_no % cfg.csv_cadence == 0 {
            observer.on_row(&row)?;
            series.push(row);
        }
        if cfg.snapshot_every > 0 && step_no % cfg.snapshot_every == 0 {
            observer.on_snapshot(stats.snapshots, step_no, &next)?;
            stats.snapshots += 1;
        }
        let old = std::mem::replace(&mut state, next);
        prev = Some((old.u, old.omega, dt));
    }
    stats.dissipated = tracker.cumulative_dissipation();
    if stats.max_energy_increase == f64::NEG_INFINITY {
        stats.max_energy_increase = 0.0;
    }
    Ok(RunOutput { state, series, stats })
}
