//! Fluid state, physical parameters, the data-dependent constants
//! `M, C0, J0, K0`, admissibility of initial data, and the two certifiers.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid, VectorField};
use crate::spectral::{curl, divergence, grad_norm_sq, l2_norm};

/// Tolerance on `||div u||_2` for admissible or projected velocities.
pub const DIV_TOL: f64 = 1e-10;
/// Nodal slack on `0 <= rho <= rho*`.
pub const DENSITY_TOL: f64 = 1e-12;
/// Smallest total mass accepted as positive.
pub const MIN_MASS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Params {
    /// Newtonian viscosity.
    pub mu: f64,
    /// Micro-rotation viscosity.
    pub chi: f64,
    /// Angular viscosity.
    pub gamma: f64,
    pub kappa: f64,
    /// Density ceiling.
    pub rho_star: f64,
    /// Smallness threshold for the three-dimensional certificate.
    pub epsilon0: f64,
    /// Constant in the local existence time.
    pub c_loc: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            mu: 0.01,
            chi: 0.005,
            gamma: 0.01,
            kappa: 0.005,
            rho_star: 1.0,
            epsilon0: 1e-2,
            c_loc: 1.0,
        }
    }
}

impl Params {
    /// `nu = mu + chi`, the effective velocity viscosity.
    pub fn nu(&self) -> f64 {
        self.mu + self.chi
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, f64, bool); 7] = [
            ("mu", self.mu, self.mu > 0.0),
            ("chi", self.chi, self.chi >= 0.0),
            ("gamma", self.gamma, self.gamma > 0.0),
            ("kappa", self.kappa, self.kappa >= 0.0),
            ("rho_star", self.rho_star, self.rho_star > 0.0),
            ("epsilon0", self.epsilon0, self.epsilon0 > 0.0),
            ("c_loc", self.c_loc, self.c_loc > 0.0),
        ];
        for (name, value, ok) in checks {
            if !value.is_finite() || !ok {
                let bound = if matches!(name, "chi" | "kappa") { ">= 0" } else { "> 0" };
                return Err(Error::InvalidParams(format!("{name} must be {bound}, got {value}")));
            }
        }
        Ok(())
    }
}

/// Snapshot of `(rho, u, omega, P)` at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct FluidState {
    pub t: f64,
    pub rho: ScalarField,
    pub u: VectorField,
    pub omega: VectorField,
    pub p: ScalarField,
}

impl FluidState {
    pub fn new(rho: ScalarField, u: VectorField, omega: VectorField) -> Self {
        let p = ScalarField::zeros_like(&rho);
        Self { t: 0.0, rho, u, omega, p }
    }

    pub fn rest(grid: &TorusGrid, density: f64) -> Self {
        Self::new(ScalarField::constant(grid, density), VectorField::zeros(grid), VectorField::zeros(grid))
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.rho.is_finite() && self.u.is_finite() && self.omega.is_finite() && self.p.is_finite()
    }

    pub fn mass(&self) -> f64 {
        self.rho.mean()
    }

    /// `1/2 (||sqrt(rho) u||^2 + ||sqrt(rho) omega||^2)`
    pub fn kinetic_energy(&self) -> f64 {
        0.5 * weighted_sq(&self.rho, &self.u) + 0.5 * weighted_sq(&self.rho, &self.omega)
    }
}

/// `||sqrt(w) v||_2^2`
pub fn weighted_sq(w: &ScalarField, v: &VectorField) -> f64 {
    let n = w.len();
    let mut s = 0.0;
    for idx in 0..n {
        let x = v.at(idx);
        s += w.as_slice()[idx] * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    }
    s / n as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constants {
    /// Total mass `M`.
    pub mass: f64,
    pub c0: f64,
    pub j0: f64,
    pub k0: f64,
    /// `(rho*)^{3/2} C0 K0`
    pub smallness_product: f64,
    pub t_loc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    NonFinite,
    DensityBelowZero(f64),
    DensityAboveCeiling(f64),
    DivergentVelocity(f64),
    NonPositiveMass(f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite => write!(f, "initial data contain non-finite values"),
            Violation::DensityBelowZero(by) => write!(f, "density below 0 by {by}"),
            Violation::DensityAboveCeiling(by) => write!(f, "density above rho_star by {by}"),
            Violation::DivergentVelocity(norm) => write!(f, "velocity not divergence-free: ||div u||_2 = {norm}"),
            Violation::NonPositiveMass(m) => write!(f, "total mass {m} is not positive"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdmissibilityReport {
    pub violations: Vec<Violation>,
}

impl AdmissibilityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for AdmissibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.passed() {
            return write!(f, "admissible");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Checks `0 <= rho0 <= rho*`, `div u0 = 0` and `M > 0`.
pub fn check_admissibility(grid: &TorusGrid, state: &FluidState, params: &Params) -> AdmissibilityReport {
    let mut violations = Vec::new();
    if !state.is_finite() {
        violations.push(Violation::NonFinite);
        return AdmissibilityReport { violations };
    }
    let min = state.rho.min();
    if min < -DENSITY_TOL {
        violations.push(Violation::DensityBelowZero(-min));
    }
    let max = state.rho.max();
    if max > params.rho_star + DENSITY_TOL {
        violations.push(Violation::DensityAboveCeiling(max - params.rho_star));
    }
    let div = l2_norm(&divergence(grid, &state.u));
    if div > DIV_TOL {
        violations.push(Violation::DivergentVelocity(div));
    }
    let mass = state.mass();
    if mass < MIN_MASS {
        violations.push(Violation::NonPositiveMass(mass));
    }
    AdmissibilityReport { violations }
}

pub fn compute_constants(grid: &TorusGrid, state: &FluidState, params: &Params) -> Result<Constants> {
    let report = check_admissibility(grid, state, params);
    if !report.passed() {
        return Err(Error::Inadmissible(report.to_string()));
    }
    let mass = state.mass();
    let c0 = weighted_sq(&state.rho, &state.u) + weighted_sq(&state.rho, &state.omega);
    let grad_u = grad_norm_sq(grid, &state.u);
    let grad_w = grad_norm_sq(grid, &state.omega);
    let div_w = l2_norm(&divergence(grid, &state.omega)).powi(2);
    let w_sq = state.omega.norm_sq();
    let curl_gap = curl(grid, &state.u).add_scaled(-2.0, &state.omega).norm_sq();
    let j0 = params.nu() * grad_u + params.gamma * grad_w + params.kappa * div_w + 4.0 * params.chi * w_sq;
    let k0 = params.mu * grad_u + params.gamma * grad_w + params.kappa * div_w + params.chi * curl_gap;
    let mut constants = Constants {
        mass,
        c0,
        j0,
        k0,
        smallness_product: params.rho_star.powf(1.5) * c0 * k0,
        t_loc: f64::INFINITY,
    };
    constants.t_loc = local_existence_bound(&constants, params);
    Ok(constants)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Certificate {
    pub certified: bool,
    pub product: f64,
}

/// Global-in-time certificate for three-dimensional data: `(rho*)^{3/2} C0 K0 <= epsilon0`.
pub fn certify_global_3d(constants: &Constants, params: &Params) -> Certificate {
    let product = params.rho_star.powf(1.5) * constants.c0 * constants.k0;
    Certificate {
        certified: product <= params.epsilon0,
        product,
    }
}

/// `T_loc = C_loc / ((rho*)^3 C0 K0^3)`, infinite for vanishing data.
pub fn local_existence_bound(constants: &Constants, params: &Params) -> f64 {
    let denom = params.rho_star.powi(3) * constants.c0 * constants.k0.powi(3);
    if denom > 0.0 {
        params.c_loc / denom
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TWO_PI;
    use crate::spectral::gradient;

    #[test]
    fn invalid_params_are_rejected() {
        let p = Params { mu: -1.0, ..Params::default() };
        assert!(p.validate().is_err());
        let p = Params { chi: 0.0, kappa: 0.0, ..Params::default() };
        assert!(p.validate().is_ok());
        assert_eq!(Params::default().nu(), 0.015);
    }

    #[test]
    fn zero_data_constants() {
        let g = TorusGrid::new(2, 16).unwrap();
        let s = FluidState::rest(&g, 1.0);
        let c = compute_constants(&g, &s, &Params::default()).unwrap();
        assert!((c.mass - 1.0).abs() < 1e-15);
        assert_eq!((c.c0, c.j0, c.k0), (0.0, 0.0, 0.0));
        assert!(c.t_loc.is_infinite());
        assert!(certify_global_3d(&c, &Params::default()).certified);
    }

    #[test]
    fn negative_density_is_reported() {
        let g = TorusGrid::new(2, 16).unwrap();
        let mut s = FluidState::rest(&g, 1.0);
        s.rho.as_mut_slice()[3] = -0.01;
        let r = check_admissibility(&g, &s, &Params::default());
        assert!(!r.passed());
        assert_eq!(r.violations[0], Violation::DensityBelowZero(0.01));
        assert!(r.to_string().contains("density below 0 by 0.01"));
        assert!(compute_constants(&g, &s, &Params::default()).is_err());
    }

    #[test]
    fn gradient_velocity_fails_divergence_check() {
        let g = TorusGrid::new(2, 32).unwrap();
        let f = ScalarField::from_fn(&g, |x| (TWO_PI * x[0]).sin());
        let mut s = FluidState::rest(&g, 1.0);
        s.u = gradient(&g, &f);
        let r = check_admissibility(&g, &s, &Params::default());
        // div grad sin = -(2 pi)^2 sin, L2 norm (2 pi)^2 / sqrt 2
        let expected = TWO_PI * TWO_PI / 2f64.sqrt();
        match &r.violations[..] {
            [Violation::DivergentVelocity(norm)] => assert!((norm - expected).abs() < 1e-9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn local_bound_formula() {
        let c = Constants { mass: 1.0, c0: 0.5, j0: 1.0, k0: 1.0, smallness_product: 0.0, t_loc: 0.0 };
        let p = Params::default();
        assert!((local_existence_bound(&c, &p) - 2.0).abs() < 1e-15);
        let p2 = Params { rho_star: 2.0, ..p };
        assert!((local_existence_bound(&c, &p2) - 0.25).abs() < 1e-15);
    }
}
