//! Monitored quantities: energy balance, Sobolev norms, time-weighted
//! estimates, the Lipschitz budget, and the two inequalities whose constants
//! are explicit enough to evaluate (the weighted Poincare bound and the
//! logarithmic interpolation ratio).

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid, VectorField};
use crate::spectral::{
    curl, divergence, grad_norm_sq, hessian_norm_sq, k_squared, l2_norm, linf_grad, spectrum, vector_lp_norm,
};
use crate::state::{weighted_sq, Constants, FluidState, Params};

/// Squared `L^2` norms entering the dissipation `D`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DissipationParts {
    pub grad_u_sq: f64,
    pub grad_w_sq: f64,
    pub div_w_sq: f64,
    pub curl_gap_sq: f64,
}

impl DissipationParts {
    pub fn total(&self, p: &Params) -> f64 {
        p.mu * self.grad_u_sq + p.gamma * self.grad_w_sq + p.kappa * self.div_w_sq + p.chi * self.curl_gap_sq
    }
}

pub fn dissipation_parts(grid: &TorusGrid, u: &VectorField, w: &VectorField) -> DissipationParts {
    DissipationParts {
        grad_u_sq: grad_norm_sq(grid, u),
        grad_w_sq: grad_norm_sq(grid, w),
        div_w_sq: l2_norm(&divergence(grid, w)).powi(2),
        curl_gap_sq: curl(grid, u).add_scaled(-2.0, w).norm_sq(),
    }
}

/// `D = mu ||grad u||^2 + gamma ||grad w||^2 + kappa ||div w||^2 + chi ||curl u - 2 w||^2`
pub fn dissipation(grid: &TorusGrid, u: &VectorField, w: &VectorField, p: &Params) -> f64 {
    dissipation_parts(grid, u, w).total(p)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyReport {
    pub t: f64,
    pub energy: f64,
    /// `D` at the newer state.
    pub dissipation: f64,
    /// `(E^n - E^{n-1}) / dt + D(midpoint)`.
    pub residual: f64,
    /// `dt * D(midpoint)` for a single pair; a running sum inside [`Tracker`].
    pub cumulative_dissipation: f64,
}

fn midpoint(a: &VectorField, b: &VectorField) -> VectorField {
    a.scaled(0.5).add_scaled(0.5, b)
}

pub fn energy_report(grid: &TorusGrid, prev: &FluidState, next: &FluidState, p: &Params) -> EnergyReport {
    let dt = next.t - prev.t;
    let d_mid = dissipation(grid, &midpoint(&prev.u, &next.u), &midpoint(&prev.omega, &next.omega), p);
    let (e0, e1) = (prev.kinetic_energy(), next.kinetic_energy());
    let residual = if dt > 0.0 { (e1 - e0) / dt + d_mid } else { 0.0 };
    EnergyReport {
        t: next.t,
        energy: e1,
        dissipation: dissipation(grid, &next.u, &next.omega, p),
        residual,
        cumulative_dissipation: dt * d_mid,
    }
}

/// Squared norms bounded by the `H^1` and second-derivative estimates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct H1Report {
    pub grad_u_sq: f64,
    pub grad_w_sq: f64,
    pub hess_u_sq: f64,
    pub hess_w_sq: f64,
    pub grad_p_sq: f64,
}

impl H1Report {
    pub fn is_finite(&self) -> bool {
        [self.grad_u_sq, self.grad_w_sq, self.hess_u_sq, self.hess_w_sq, self.grad_p_sq]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn h1_report(grid: &TorusGrid, state: &FluidState) -> H1Report {
    H1Report {
        grad_u_sq: grad_norm_sq(grid, &state.u),
        grad_w_sq: grad_norm_sq(grid, &state.omega),
        hess_u_sq: hessian_norm_sq(grid, &state.u),
        hess_w_sq: hessian_norm_sq(grid, &state.omega),
        grad_p_sq: crate::spectral::scalar_grad_norm_sq(grid, &state.p),
    }
}

/// Left side and structural right-side pieces of the `L^p` velocity bound.
/// The universal constant is unknown, so nothing is asserted here.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpBound {
    pub p: f64,
    /// `||u||_p + ||w||_p`
    pub lhs: f64,
    /// `C0 / M`
    pub energy_over_mass: f64,
    /// `||M - rho||_2 / M`
    pub density_deviation: f64,
    /// `||grad u||_2 + ||grad w||_2`
    pub gradient_sum: f64,
}

impl LpBound {
    /// `lhs / (||grad u||_2 + ||grad w||_2)`, infinite when the gradients vanish.
    pub fn gradient_ratio(&self) -> f64 {
        if self.gradient_sum > 0.0 {
            self.lhs / self.gradient_sum
        } else if self.lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

pub fn lp_bound_check(grid: &TorusGrid, state: &FluidState, constants: &Constants, p_exp: f64) -> Result<LpBound> {
    let ok = match grid.dim() {
        2 => p_exp >= 1.0 && p_exp.is_finite(),
        _ => (1.0..=6.0).contains(&p_exp),
    };
    if !ok {
        let range = if grid.dim() == 2 { "[1, inf)" } else { "[1, 6]" };
        return Err(Error::InvalidArgument(format!(
            "exponent {p_exp} outside {range} for d = {}",
            grid.dim()
        )));
    }
    let m = constants.mass;
    let deviation = l2_norm(&state.rho.map(|r| m - r));
    Ok(LpBound {
        p: p_exp,
        lhs: vector_lp_norm(&state.u, p_exp)? + vector_lp_norm(&state.omega, p_exp)?,
        energy_over_mass: constants.c0 / m,
        density_deviation: deviation / m,
        gradient_sum: grad_norm_sq(grid, &state.u).sqrt() + grad_norm_sq(grid, &state.omega).sqrt(),
    })
}

/// Time-weighted quantities at the last sample of a history.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WeightedReport {
    pub t: f64,
    /// `t (||sqrt(rho) u_t||^2 + ||sqrt(rho) w_t||^2)`
    pub w1: f64,
    /// `int_0^t tau (||grad u_t||^2 + ||grad w_t||^2) dtau`
    pub w2: f64,
    /// `int_0^t ||grad u||_inf dtau`
    pub b: f64,
}

/// Time-derivative diagnostics from backward differences over a stored history.
pub fn weighted_report(grid: &TorusGrid, history: &[FluidState], p: &Params) -> Result<WeightedReport> {
    if history.len() < 2 {
        return Err(Error::InvalidArgument("weighted report needs at least two states".into()));
    }
    let mut tracker = Tracker::new(grid, *p, &history[0]);
    for pair in history.windows(2) {
        tracker.record(grid, &pair[0], &pair[1], 0.0);
    }
    Ok(tracker.weighted())
}

/// Nodal `||grad u||_inf` and `||grad w||_inf` samples in time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LipschitzSamples {
    pub t: Vec<f64>,
    pub grad_u: Vec<f64>,
    pub grad_w: Vec<f64>,
}

impl LipschitzSamples {
    pub fn push(&mut self, t: f64, grad_u: f64, grad_w: f64) {
        self.t.push(t);
        self.grad_u.push(grad_u);
        self.grad_w.push(grad_w);
    }

    pub fn from_history(grid: &TorusGrid, history: &[FluidState]) -> Self {
        let mut s = Self::default();
        for st in history {
            s.push(st.t, linf_grad(grid, &st.u), linf_grad(grid, &st.omega));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzBudget {
    /// `L(s, T) = int_0^T (||grad u||_inf^s + ||grad w||_inf^s) dt`
    pub l: f64,
    /// `B(T) = int_0^T ||grad u||_inf dt`
    pub b: f64,
    /// First time `B` reaches 1/2 (linear within a step); infinite if never.
    pub crossing: f64,
}

/// Trapezoidal integrals over the samples. `s` must lie in `[1, 2)` for
/// `d = 2` and in `[1, 4/3)` for `d = 3`.
pub fn lipschitz_budget(samples: &LipschitzSamples, dim: usize, s: f64) -> Result<LipschitzBudget> {
    let hi = if dim == 2 { 2.0 } else { 4.0 / 3.0 };
    if !(s >= 1.0 && s < hi) {
        return Err(Error::InvalidArgument(format!("s = {s} outside [1, {hi}) for d = {dim}")));
    }
    let mut l = 0.0;
    let mut b = 0.0;
    let mut crossing = f64::INFINITY;
    for i in 1..samples.t.len() {
        let dt = samples.t[i] - samples.t[i - 1];
        let (g0, g1) = (samples.grad_u[i - 1], samples.grad_u[i]);
        let (w0, w1) = (samples.grad_w[i - 1], samples.grad_w[i]);
        l += 0.5 * dt * (g0.powf(s) + w0.powf(s) + g1.powf(s) + w1.powf(s));
        let inc = 0.5 * dt * (g0 + g1);
        if crossing.is_infinite() && b + inc >= 0.5 {
            crossing = samples.t[i - 1] + dt * cross_fraction(b, g0, g1, dt);
        }
        b += inc;
    }
    Ok(LipschitzBudget { l, b, crossing })
}

/// Fraction `f` of a step with linear integrand `g0 -> g1` at which the running
/// integral starting from `b` reaches 1/2.
fn cross_fraction(b: f64, g0: f64, g1: f64, dt: f64) -> f64 {
    let need = (0.5 - b) / dt;
    // need = g0 f + (g1 - g0) f^2 / 2
    let a = 0.5 * (g1 - g0);
    if a.abs() < 1e-14 * (g0.abs() + g1.abs()).max(f64::MIN_POSITIVE) {
        return if g0 > 0.0 { (need / g0).clamp(0.0, 1.0) } else { 1.0 };
    }
    let disc = (g0 * g0 + 4.0 * a * need).max(0.0);
    ((-g0 + disc.sqrt()) / (2.0 * a)).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoincareCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// `||z||_2 <= |int a z| / M + (1 + ||M - a||_2 / M) ||grad z||_2`, `M = int a`.
///
/// `||grad z||_2` uses the full wavenumber, so the discrete inequality holds
/// for every nodal field and not only band-limited ones.
pub fn poincare_weighted_check(grid: &TorusGrid, a: &ScalarField, z: &ScalarField) -> Result<PoincareCheck> {
    if a.min() < 0.0 {
        return Err(Error::InvalidArgument(format!("weight must be nonnegative, min is {}", a.min())));
    }
    let m = a.mean();
    if !(m > 0.0) {
        return Err(Error::Degenerate(format!("weight has integral {m}")));
    }
    let zh = spectrum(grid, z);
    let grad_z = zh
        .iter()
        .enumerate()
        .map(|(idx, c)| k_squared(grid, idx) * c.norm_sqr())
        .sum::<f64>()
        .sqrt();
    let lhs = l2_norm(z);
    let rhs = a.dot(z).abs() / m + (1.0 + l2_norm(&a.map(|v| m - v)) / m) * grad_z;
    Ok(PoincareCheck { lhs, rhs, pass: lhs <= rhs + 1e-10 })
}

/// `||sqrt(rho) v^2||_2` divided by the constant-free right side
/// `||sqrt(rho) v||_2 ||grad v||_2 log^{1/2}(e + ||rho - M||_2^2 / M^2 + rho* ||grad v||_2^2 / ||sqrt(rho) v||_2^2)`.
/// Two-dimensional only.
pub fn desjardins_ratio(grid: &TorusGrid, rho: &ScalarField, v: &ScalarField, rho_star: f64) -> Result<f64> {
    if grid.dim() != 2 {
        return Err(Error::InvalidArgument("the logarithmic ratio is defined for d = 2 only".into()));
    }
    let n = rho.len() as f64;
    let (r, x) = (rho.as_slice(), v.as_slice());
    let weighted = (r.iter().zip(x).map(|(r, v)| r * v * v).sum::<f64>() / n).sqrt();
    let lhs = (r.iter().zip(x).map(|(r, v)| r * v.powi(4)).sum::<f64>() / n).sqrt();
    let grad = crate::spectral::scalar_grad_norm_sq(grid, v).sqrt();
    if !(weighted > 0.0) || !(grad > 0.0) {
        return Err(Error::Degenerate(format!(
            "||sqrt(rho) v||_2 = {weighted}, ||grad v||_2 = {grad}"
        )));
    }
    let m = rho.mean();
    let dev = l2_norm(&rho.map(|q| q - m)).powi(2) / (m * m);
    let log = (std::f64::consts::E + dev + rho_star * grad * grad / (weighted * weighted)).ln();
    Ok(lhs / (weighted * grad * log.sqrt()))
}

/// Extremes of [`desjardins_ratio`] over a seeded family of pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DesjardinsSweep {
    pub samples: usize,
    pub max_ratio: f64,
    pub argmax: usize,
    /// Samples whose density has a vacuum node.
    pub with_vacuum: usize,
}

/// Sample `i` of the family: `v` a random trigonometric polynomial of degree
/// 4 and `rho = clamp(0.3 + r, 0, rho*)` with `r` a zero-mean one of degree 3.
/// Both are continuous functions, so the family is the same on every grid.
pub fn desjardins_family(grid: &TorusGrid, i: usize, rho_star: f64) -> (ScalarField, ScalarField) {
    let seed = 0x5eed_0000 + 2 * i as u64;
    let v = crate::init::RandomTrig::new(2, 4, seed).sample(grid);
    let r = crate::init::RandomTrig::new(2, 3, seed + 1).with_constant(0.3);
    let rho = r.sample(grid).map(|x| x.clamp(0.0, rho_star));
    (rho, v)
}

pub fn desjardins_sweep(grid: &TorusGrid, samples: usize, rho_star: f64) -> Result<DesjardinsSweep> {
    let mut out = DesjardinsSweep {
        samples,
        max_ratio: 0.0,
        argmax: 0,
        with_vacuum: 0,
    };
    for i in 0..samples {
        let (rho, v) = desjardins_family(grid, i, rho_star);
        if rho.min() == 0.0 {
            out.with_vacuum += 1;
        }
        let r = desjardins_ratio(grid, &rho, &v, rho_star)?;
        if r > out.max_ratio {
            out.max_ratio = r;
            out.argmax = i;
        }
    }
    Ok(out)
}

/// One output row; the field order matches [`DiagnosticsRow::HEADER`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub energy_residual: f64,
    pub grad_u_l2: f64,
    pub grad_w_l2: f64,
    pub div_w_l2: f64,
    pub curl_u_minus_2w_l2: f64,
    pub div_u_l2: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub grad_u_linf: f64,
    pub w1: f64,
    pub w2: f64,
    pub b_budget: f64,
    pub preclip_violation: f64,
}

impl DiagnosticsRow {
    pub const HEADER: [&'static str; 17] = [
        "t",
        "mass",
        "E",
        "D",
        "energy_residual",
        "grad_u_l2",
        "grad_w_l2",
        "div_w_l2",
        "curl_u_minus_2w_l2",
        "div_u_l2",
        "rho_min",
        "rho_max",
        "grad_u_linf",
        "W1",
        "W2",
        "B_budget",
        "preclip_violation",
    ];

    pub fn values(&self) -> [f64; 17] {
        [
            self.t,
            self.mass,
            self.energy,
            self.dissipation,
            self.energy_residual,
            self.grad_u_l2,
            self.grad_w_l2,
            self.div_w_l2,
            self.curl_u_minus_2w_l2,
            self.div_u_l2,
            self.rho_min,
            self.rho_max,
            self.grad_u_linf,
            self.w1,
            self.w2,
            self.b_budget,
            self.preclip_violation,
        ]
    }
}

/// Running accumulator of the time integrals along a run.
#[derive(Clone, Debug)]
pub struct Tracker {
    params: Params,
    w2: f64,
    w2_integrand: f64,
    b: f64,
    cumulative_dissipation: f64,
    last_w1: f64,
    t: f64,
    samples: LipschitzSamples,
}

impl Tracker {
    pub fn new(grid: &TorusGrid, params: Params, initial: &FluidState) -> Self {
        let mut samples = LipschitzSamples::default();
        samples.push(initial.t, linf_grad(grid, &initial.u), linf_grad(grid, &initial.omega));
        Self {
            params,
            w2: 0.0,
            w2_integrand: 0.0,
            b: 0.0,
            cumulative_dissipation: 0.0,
            last_w1: 0.0,
            t: initial.t,
            samples,
        }
    }

    /// Consumes the step `prev -> next` and returns the row at `next`.
    pub fn record(&mut self, grid: &TorusGrid, prev: &FluidState, next: &FluidState, preclip: f64) -> DiagnosticsRow {
        let p = self.params;
        let dt = next.t - prev.t;
        let energy = energy_report(grid, prev, next, &p);
        self.cumulative_dissipation += energy.cumulative_dissipation;

        let parts = dissipation_parts(grid, &next.u, &next.omega);
        let g_u = linf_grad(grid, &next.u);
        let g_w = linf_grad(grid, &next.omega);

        let inv = if dt > 0.0 { 1.0 / dt } else { 0.0 };
        let u_t = next.u.add_scaled(-1.0, &prev.u).scaled(inv);
        let w_t = next.omega.add_scaled(-1.0, &prev.omega).scaled(inv);
        let w1 = next.t * (weighted_sq(&next.rho, &u_t) + weighted_sq(&next.rho, &w_t));
        let f = next.t * (grad_norm_sq(grid, &u_t) + grad_norm_sq(grid, &w_t));
        self.w2 += 0.5 * dt * (self.w2_integrand + f);
        self.w2_integrand = f;

        let g_prev = *self.samples.grad_u.last().unwrap_or(&g_u);
        self.b += 0.5 * dt * (g_prev + g_u);
        self.samples.push(next.t, g_u, g_w);
        self.last_w1 = w1;
        self.t = next.t;

        DiagnosticsRow {
            t: next.t,
            mass: next.mass(),
            energy: energy.energy,
            dissipation: parts.total(&p),
            energy_residual: energy.residual,
            grad_u_l2: parts.grad_u_sq.sqrt(),
            grad_w_l2: parts.grad_w_sq.sqrt(),
            div_w_l2: parts.div_w_sq.sqrt(),
            curl_u_minus_2w_l2: parts.curl_gap_sq.sqrt(),
            div_u_l2: l2_norm(&divergence(grid, &next.u)),
            rho_min: next.rho.min(),
            rho_max: next.rho.max(),
            grad_u_linf: g_u,
            w1,
            w2: self.w2,
            b_budget: self.b,
            preclip_violation: preclip,
        }
    }

    pub fn weighted(&self) -> WeightedReport {
        WeightedReport { t: self.t, w1: self.last_w1, w2: self.w2, b: self.b }
    }

    pub fn cumulative_dissipation(&self) -> f64 {
        self.cumulative_dissipation
    }

    pub fn samples(&self) -> &LipschitzSamples {
        &self.samples
    }
}
