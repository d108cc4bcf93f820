//! Paired runs for empirical uniqueness and mollification sweeps.

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid, VectorField};
use crate::solver::{run, SnapshotCollector, SolverConfig};
use crate::spectral::{grad_norm_sq, l2_norm, mollify, mollify_vector, vector_l2_norm};
use crate::state::{weighted_sq, FluidState, Params};

/// Additive perturbation of an initial state.
#[derive(Clone, Debug)]
pub struct Perturbation {
    pub rho: ScalarField,
    pub u: VectorField,
    pub omega: VectorField,
}

impl Perturbation {
    pub fn zero(grid: &TorusGrid) -> Self {
        Self {
            rho: ScalarField::zeros(grid),
            u: VectorField::zeros(grid),
            omega: VectorField::zeros(grid),
        }
    }

    pub fn velocity(grid: &TorusGrid, u: VectorField) -> Self {
        Self { u, ..Self::zero(grid) }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rho: self.rho.scaled(s),
            u: self.u.scaled(s),
            omega: self.omega.scaled(s),
        }
    }

    /// `sqrt(||d rho||^2 + ||d u||^2 + ||d w||^2)`
    pub fn magnitude(&self) -> f64 {
        let (a, b, c) = (l2_norm(&self.rho), vector_l2_norm(&self.u), vector_l2_norm(&self.omega));
        (a * a + b * b + c * c).sqrt()
    }

    /// Adds the perturbation; skips exact zeros so a zero perturbation
    /// reproduces the base state bit for bit.
    pub fn apply(&self, base: &FluidState) -> FluidState {
        let mut s = base.clone();
        if self.rho.max_abs() != 0.0 {
            s.rho = base.rho.add_scaled(1.0, &self.rho);
        }
        if self.u.max_magnitude() != 0.0 {
            s.u = base.u.add_scaled(1.0, &self.u);
        }
        if self.omega.max_magnitude() != 0.0 {
            s.omega = base.omega.add_scaled(1.0, &self.omega);
        }
        s
    }
}

/// Difference norms between two runs at the shared snapshot times.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairReport {
    pub perturbation: f64,
    pub t: Vec<f64>,
    pub du: Vec<f64>,
    pub dw: Vec<f64>,
    pub grad_du: Vec<f64>,
    pub grad_dw: Vec<f64>,
    /// `||sqrt(rho_avg) du||_2` with `rho_avg` the mean of the two densities.
    pub weighted_du: Vec<f64>,
    /// Largest `||div u||_2` after any step of either run.
    pub max_div_u: f64,
}

impl PairReport {
    pub const HEADER: [&'static str; 6] = ["t", "du_l2", "dw_l2", "grad_du_l2", "grad_dw_l2", "sqrt_rho_du_l2"];

    pub fn rows(&self) -> impl Iterator<Item = [f64; 6]> + '_ {
        (0..self.t.len()).map(|i| [self.t[i], self.du[i], self.dw[i], self.grad_du[i], self.grad_dw[i], self.weighted_du[i]])
    }

    pub fn sup_du(&self) -> f64 {
        self.du.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_identically_zero(&self) -> bool {
        [&self.du, &self.dw, &self.grad_du, &self.grad_dw, &self.weighted_du]
            .iter()
            .all(|s| s.iter().all(|&v| v == 0.0))
    }
}

fn difference(grid: &TorusGrid, a: &FluidState, b: &FluidState) -> [f64; 5] {
    let du = b.u.add_scaled(-1.0, &a.u);
    let dw = b.omega.add_scaled(-1.0, &a.omega);
    let rho = a.rho.scaled(0.5).add_scaled(0.5, &b.rho);
    [
        vector_l2_norm(&du),
        vector_l2_norm(&dw),
        grad_norm_sq(grid, &du).sqrt(),
        grad_norm_sq(grid, &dw).sqrt(),
        weighted_sq(&rho, &du).sqrt(),
    ]
}

/// Runs `state0` and `state0 + perturbation` with one configuration and
/// compares them at every snapshot.
pub fn run_pair(
    grid: &TorusGrid,
    state0: &FluidState,
    perturbation: &Perturbation,
    p: &Params,
    cfg: &SolverConfig,
) -> Result<PairReport> {
    let other = perturbation.apply(state0);
    let mut ca = SnapshotCollector::default();
    let mut cb = SnapshotCollector::default();
    let ra = run(grid, state0, p, cfg, &mut ca)?;
    let rb = run(grid, &other, p, cfg, &mut cb)?;
    if ca.snapshots.len() != cb.snapshots.len() {
        return Err(Error::InvalidArgument(format!(
            "runs produced {} and {} snapshots; adaptive steps diverged",
            ca.snapshots.len(),
            cb.snapshots.len()
        )));
    }
    let mut rep = PairReport {
        perturbation: perturbation.magnitude(),
        max_div_u: ra.stats.max_div_u.max(rb.stats.max_div_u),
        ..PairReport::default()
    };
    for (a, b) in ca.snapshots.iter().zip(&cb.snapshots) {
        let d = difference(grid, a, b);
        rep.t.push(a.t);
        rep.du.push(d[0]);
        rep.dw.push(d[1]);
        rep.grad_du.push(d[2]);
        rep.grad_dw.push(d[3]);
        rep.weighted_du.push(d[4]);
    }
    Ok(rep)
}

/// One mollification level of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct MollifiedRun {
    pub delta: f64,
    pub min_rho0: f64,
    pub final_state: FluidState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTable {
    pub runs: Vec<MollifiedRun>,
    /// `distances[i]` compares levels `i` and `i + 1` at the final time:
    /// `sqrt(||d rho||^2 + ||d u||^2 + ||d w||^2)`.
    pub distances: Vec<f64>,
}

impl ConvergenceTable {
    pub fn is_monotone_decreasing(&self) -> bool {
        self.distances.windows(2).all(|w| w[1] < w[0])
    }
}

/// `rho^delta = min(max(j_delta * rho, delta * floor_scale), rho_star)` and
/// `j_delta` applied to `u` and `w`.
pub fn mollified_data(grid: &TorusGrid, rough: &FluidState, delta: f64, floor_scale: f64, rho_star: f64) -> Result<FluidState> {
    let floor = delta * floor_scale;
    if floor > rho_star {
        return Err(Error::InvalidArgument(format!("density floor {floor} exceeds rho_star {rho_star}")));
    }
    let rho = mollify(grid, &rough.rho, delta)?.map(|r| r.max(floor).min(rho_star));
    let mut s = FluidState::new(rho, mollify_vector(grid, &rough.u, delta)?, mollify_vector(grid, &rough.omega, delta)?);
    s.t = rough.t;
    Ok(s)
}

/// Evolves the mollified data for each `delta` (strictly decreasing) and
/// tabulates distances between successive final states.
pub fn mollification_convergence(
    grid: &TorusGrid,
    rough: &FluidState,
    deltas: &[f64],
    floor_scale: f64,
    p: &Params,
    cfg: &SolverConfig,
) -> Result<ConvergenceTable> {
    if deltas.is_empty() || deltas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("delta sequence must be nonempty and strictly decreasing".into()));
    }
    let mut runs = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let s0 = mollified_data(grid, rough, delta, floor_scale, p.rho_star)?;
        let min_rho0 = s0.rho.min();
        if min_rho0 < delta * floor_scale {
            return Err(Error::Inadmissible(format!("mollified density {min_rho0} below floor at delta {delta}")));
        }
        let out = run(grid, &s0, p, cfg, &mut crate::solver::NullObserver)?;
        runs.push(MollifiedRun {
            delta,
            min_rho0,
            final_state: out.state,
        });
    }
    let distances = runs
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0].final_state, &w[1].final_state);
            let r = l2_norm(&b.rho.add_scaled(-1.0, &a.rho));
            let u = vector_l2_norm(&b.u.add_scaled(-1.0, &a.u));
            let o = vector_l2_norm(&b.omega.add_scaled(-1.0, &a.omega));
            (r * r + u * u + o * o).sqrt()
        })
        .collect();
    Ok(ConvergenceTable { runs, distances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{microrotation_pattern, taylor_green, vacuum_plateau};

    fn base(grid: &TorusGrid) -> FluidState {
        let mut s = FluidState::rest(grid, 1.0);
        s.u = taylor_green(grid, 0.5);
        s.omega = microrotation_pattern(grid, 0.5);
        s
    }

    fn cfg(t_end: f64) -> SolverConfig {
        SolverConfig {
            dt: 2e-3,
            t_end,
            snapshot_every: 5,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn zero_perturbation_is_a_fixed_point() {
        let g = TorusGrid::new(2, 16).unwrap();
        let rep = run_pair(&g, &base(&g), &Perturbation::zero(&g), &Params::default(), &cfg(0.05)).unwrap();
        assert_eq!(rep.t.len(), 6);
        assert!(rep.is_identically_zero());
        assert_eq!(rep.perturbation, 0.0);
    }

    #[test]
    fn pair_is_symmetric_and_linear() {
        let g = TorusGrid::new(2, 16).unwrap();
        let p = Params::default();
        let a = base(&g);
        let d = Perturbation::velocity(&g, taylor_green(&g, 1e-6));
        let b = d.apply(&a);
        let back = Perturbation::velocity(&g, a.u.add_scaled(-1.0, &b.u));
        let ab = run_pair(&g, &a, &d, &p, &cfg(0.05)).unwrap();
        let ba = run_pair(&g, &b, &back, &p, &cfg(0.05)).unwrap();
        for (x, y) in ab.du.iter().zip(&ba.du) {
            assert!((x - y).abs() <= 1e-6 * x.max(1e-300), "{x} {y}");
        }
        let twice = run_pair(&g, &a, &d.scaled(2.0), &p, &cfg(0.05)).unwrap();
        let r = twice.du.last().unwrap() / ab.du.last().unwrap();
        assert!((r - 2.0).abs() < 1e-3, "{r}");
    }

    #[test]
    fn smooth_data_barely_moves_under_mollification() {
        let g = TorusGrid::new(2, 16).unwrap();
        let table = mollification_convergence(&g, &base(&g), &[2e-5, 1e-5], 1.0, &Params::default(), &cfg(0.02)).unwrap();
        assert!(table.distances[0] <= 1e-8, "{:?}", table.distances);
    }

    #[test]
    fn floor_is_enforced_and_sequence_checked() {
        let g = TorusGrid::new(2, 32).unwrap();
        let mut rough = FluidState::rest(&g, 1.0);
        rough.rho = vacuum_plateau(&g, 1.0, 0.5, 0.0);
        let s = mollified_data(&g, &rough, 0.1, 1.0, 1.0).unwrap();
        assert!(s.rho.min() >= 0.1);
        assert!(s.rho.max() <= 1.0);
        assert!(mollification_convergence(&g, &rough, &[0.1, 0.2], 1.0, &Params::default(), &cfg(0.01)).is_err());
    }
}
