//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//! Runs with `harness = false`, so output is never captured.

use std::time::Instant;

use micropolar::diagnostics::{desjardins_sweep, poincare_weighted_check};
use micropolar::init::{microrotation_pattern, taylor_green, vacuum_plateau, RandomTrig};
use micropolar::lagrangian::{
    deformation_series_a, integrate_flow_map, jacobian_deviation, lagrangian_residual, piola_residual, FlowMap,
};
use micropolar::solver::{run, NullObserver, SnapshotCollector};
use micropolar::spectral::{grad_norm_sq, vector_l2_norm};
use micropolar::stability::{run_pair, Perturbation};
use micropolar::state::{certify_global_3d, compute_constants};
use micropolar::{FluidState, Params, SolverConfig, TorusGrid, VectorField, TWO_PI};

/// Divergence tolerance shared by every run.
const DIV_TOL: f64 = 1e-10;

/// Values below this are treated as round-off when a refinement ratio is asked for.
const ROUND_OFF_FLOOR: f64 = 1e-12;

/// Bound on `sup_t ||du||_2` for a `1e-6` Taylor-Green-shaped velocity
/// perturbation at reference parameters. Calibrated once: the observed
/// supremum is `7.07e-7`, attained at `t = 0`, and the difference decays.
const CALIBRATED_SUP_DU: f64 = 1.0e-6;

struct Outcome {
    pass: bool,
    detail: String,
}

/// Largest `||div u||_2` over every step of every run so far.
#[derive(Default)]
struct DivLedger {
    worst: f64,
    runs: usize,
}

impl DivLedger {
    fn add(&mut self, v: f64) {
        self.worst = self.worst.max(v);
        self.runs += 1;
    }
}

fn tg_state(grid: &TorusGrid, amp: f64, omega_amp: f64) -> FluidState {
    let mut s = FluidState::rest(grid, 1.0);
    s.u = taylor_green(grid, amp);
    if omega_amp != 0.0 {
        s.omega = microrotation_pattern(grid, omega_amp);
    }
    s
}

fn reference_params() -> Params {
    Params {
        mu: 0.01,
        gamma: 0.01,
        kappa: 0.005,
        chi: 0.005,
        rho_star: 1.0,
        ..Params::default()
    }
}

fn refinement_ok(coarse: f64, fine: f64) -> bool {
    coarse >= 2.0 * fine || (coarse <= ROUND_OFF_FLOOR && fine <= ROUND_OFF_FLOOR)
}

fn check_taylor_green(div: &mut DivLedger) -> Outcome {
    let g = TorusGrid::new(2, 64).unwrap();
    let p = Params { mu: 0.01, chi: 0.0, ..Params::default() };
    let s0 = tg_state(&g, 1.0, 0.0);
    let cfg = SolverConfig { dt: 1e-3, t_end: 1.0, snapshot_every: 1, ..SolverConfig::default() };
    let start = Instant::now();
    let mut col = SnapshotCollector::default();
    let out = run(&g, &s0, &p, &cfg, &mut col).unwrap();
    let secs = start.elapsed().as_secs_f64();
    div.add(out.stats.max_div_u);
    let err = col
        .snapshots
        .iter()
        .map(|s| {
            let exact = s0.u.scaled((-2.0 * TWO_PI * TWO_PI * p.nu() * s.t).exp());
            vector_l2_norm(&s.u.add_scaled(-1.0, &exact))
        })
        .fold(0.0, f64::max);
    Outcome {
        pass: err <= 1e-6 && secs <= 60.0,
        detail: format!("max L2 error {err:.3e} (tol 1e-6), runtime {secs:.1} s (limit 60 s), {} steps", out.stats.steps),
    }
}

fn check_energy_order(div: &mut DivLedger) -> Outcome {
    let g = TorusGrid::new(2, 32).unwrap();
    let p = reference_params();
    let s0 = tg_state(&g, 1.0, 1.0);
    let mut res = Vec::new();
    let mut worst_increase = f64::NEG_INFINITY;
    let mut budget_gap = f64::NEG_INFINITY;
    for dt in [2e-3, 1e-3] {
        let cfg = SolverConfig { dt, t_end: 0.5, snapshot_every: 0, ..SolverConfig::default() };
        let out = run(&g, &s0, &p, &cfg, &mut NullObserver).unwrap();
        div.add(out.stats.max_div_u);
        res.push(out.stats.max_abs_energy_residual);
        worst_increase = worst_increase.max(out.stats.max_energy_increase);
        budget_gap = budget_gap.max(out.stats.dissipated - s0.kinetic_energy());
    }
    let ratio = res[0] / res[1];
    Outcome {
        pass: (3.0..=5.0).contains(&ratio) && worst_increase <= 1e-10 && budget_gap <= 1e-8,
        detail: format!(
            "max|r| {:.3e} (dt 2e-3), {:.3e} (dt 1e-3), ratio {ratio:.3} (want [3, 5]); max step increase of E {worst_increase:.3e} (slack 1e-10); int D - E(0) = {budget_gap:.3e}",
            res[0], res[1]
        ),
    }
}

fn check_vacuum(div: &mut DivLedger) -> Outcome {
    let g = TorusGrid::new(2, 64).unwrap();
    let p = reference_params();
    let mut s0 = tg_state(&g, 1.0, 0.0);
    s0.rho = vacuum_plateau(&g, 1.0, 0.5, 0.1);
    let cfg = SolverConfig { dt: 1e-3, t_end: 1.0, snapshot_every: 0, ..SolverConfig::default() };
    let out = run(&g, &s0, &p, &cfg, &mut NullObserver);
    let Ok(out) = out else {
        return Outcome { pass: false, detail: format!("run failed: {}", out.unwrap_err()) };
    };
    div.add(out.stats.max_div_u);
    let st = &out.stats;
    let pass = (out.state.t - 1.0).abs() < 1e-12
        && s0.rho.min() == 0.0
        && st.min_rho >= -1e-12
        && st.max_rho <= 1.0 + 1e-12
        && st.max_mass_drift <= 1e-6
        && st.max_preclip_violation <= 1e-3;
    Outcome {
        pass,
        detail: format!(
            "t = {}, rho in [{:.3e}, {:.16}], mass drift {:.3e} (tol 1e-6), pre-clip violation {:.3e} (tol 1e-3), unlimited cubic overshoot {:.3e}, max CG iterations {}",
            out.state.t, st.min_rho, st.max_rho, st.max_mass_drift, st.max_preclip_violation, st.max_raw_overshoot, st.max_cg_iterations
        ),
    }
}

fn solver_maps(grid: &TorusGrid, s0: &FluidState, p: &Params, dt: f64, t_end: f64, substeps: usize, div: &mut DivLedger) -> (Vec<FluidState>, Vec<FlowMap>) {
    let cfg = SolverConfig { dt, t_end, snapshot_every: 1, ..SolverConfig::default() };
    let mut col = SnapshotCollector::default();
    let out = run(grid, s0, p, &cfg, &mut col).unwrap();
    div.add(out.stats.max_div_u);
    let h = integrate_flow_map(grid, &col.snapshots, t_end, substeps).unwrap();
    (col.snapshots, h.maps)
}

fn shear_state(grid: &TorusGrid) -> FluidState {
    let mut s = FluidState::rest(grid, 1.0);
    s.u = VectorField::from_fn(grid, |x| [(TWO_PI * x[1]).sin(), 0.0, 0.0]);
    s
}

fn check_piola_jacobian(div: &mut DivLedger) -> Outcome {
    let p = Params { mu: 0.01, chi: 0.0, ..Params::default() };
    let mut pass = true;
    let mut lines = Vec::new();
    // windows close to B = 1/2: shear B = 2 pi t, Taylor-Green B ~ 8.9 t
    for (name, t_end) in [("shear", 0.075), ("taylor-green", 0.056)] {
        let mut vals = Vec::new();
        for n in [64, 128] {
            let g = TorusGrid::new(2, n).unwrap();
            let s0 = if name == "shear" { shear_state(&g) } else { tg_state(&g, 1.0, 0.0) };
            let (_, maps) = solver_maps(&g, &s0, &p, 1e-3, t_end, 4, div);
            let fm = maps.last().unwrap();
            pass &= fm.within_window();
            vals.push((piola_residual(&g, fm), jacobian_deviation(fm), fm.budget));
        }
        let (a, b) = (vals[0], vals[1]);
        let ok = a.0 <= 1e-6 && a.1 <= 1e-6 && refinement_ok(a.0, b.0) && refinement_ok(a.1, b.1);
        pass &= ok;
        lines.push(format!(
            "{name} (B {:.3}): Piola {:.2e} -> {:.2e}, |J-1| {:.2e} -> {:.2e} for N 64 -> 128",
            a.2, a.0, b.0, a.1, b.1
        ));
    }
    Outcome {
        pass,
        detail: format!("{}; tol 1e-6 at N=64, ratio >= 2 unless both below {ROUND_OFF_FLOOR:e}", lines.join("; ")),
    }
}

fn check_deformation_series(div: &mut DivLedger) -> Outcome {
    let g = TorusGrid::new(2, 64).unwrap();
    let p = Params { mu: 0.01, chi: 0.0, ..Params::default() };
    let bound = 0.25f64.powi(11) / 0.75;
    let mut pass = true;
    let mut lines = Vec::new();
    for (name, s0) in [("taylor-green", tg_state(&g, 1.0, 0.0)), ("shear", shear_state(&g))] {
        let (_, maps) = solver_maps(&g, &s0, &p, 1e-3, 0.045, 1, div);
        let fm = maps.iter().filter(|m| m.budget <= 0.25).last().unwrap();
        let rep = deformation_series_a(fm, 10).unwrap();
        pass &= rep.discrepancy <= bound && fm.budget > 0.2;
        lines.push(format!(
            "{name}: B {:.4}, |A_series - A_direct|_inf {:.3e}, own tail bound {:.3e}",
            fm.budget, rep.discrepancy, rep.tail_bound
        ));
    }
    Outcome { pass, detail: format!("{}; tol 0.25^11/0.75 = {bound:.3e}", lines.join("; ")) }
}

fn check_lagrangian_residuals(div: &mut DivLedger) -> Outcome {
    let g = TorusGrid::new(2, 32).unwrap();
    let p = reference_params();
    let s0 = tg_state(&g, 0.2, 0.2);
    let mut rows = Vec::new();
    let mut budget: f64 = 0.0;
    for dt in [2e-3, 1e-3] {
        let (states, maps) = solver_maps(&g, &s0, &p, dt, 0.25, 1, div);
        budget = budget.max(maps.last().unwrap().budget);
        rows.push(lagrangian_residual(&g, &states, &maps, &p).unwrap().max);
    }
    let (a, b) = (rows[0], rows[1]);
    let names = ["momentum", "div", "microrotation", "density"];
    let pairs = [(a.momentum, b.momentum), (a.divergence, b.divergence), (a.microrotation, b.microrotation), (a.density, b.density)];
    let pass = budget <= 0.5 && pairs.iter().all(|&(x, y)| refinement_ok(x, y));
    let parts: Vec<String> = names
        .iter()
        .zip(pairs)
        .map(|(n, (x, y))| format!("{n} {x:.3e} -> {y:.3e}"))
        .collect();
    Outcome {
        pass,
        detail: format!(
            "B(0.25) = {budget:.3}; {} for dt 2e-3 -> 1e-3; ratio >= 2 unless both below {ROUND_OFF_FLOOR:e}",
            parts.join(", ")
        ),
    }
}

fn check_weighted_poincare() -> Outcome {
    let g = TorusGrid::new(2, 32).unwrap();
    let mut passed = 0;
    let mut min_slack = f64::INFINITY;
    for i in 0..1000u64 {
        let a = RandomTrig::new(2, 3, 2 * i).with_constant(0.2).sample(&g).map(|v| v.max(0.0));
        let z = RandomTrig::new(2, 4, 2 * i + 1).sample(&g);
        let c = poincare_weighted_check(&g, &a, &z).unwrap();
        if c.pass {
            passed += 1;
        }
        min_slack = min_slack.min(c.rhs - c.lhs);
    }
    Outcome {
        pass: passed == 1000,
        detail: format!("{passed}/1000 pairs pass, smallest rhs - lhs {min_slack:.3e} (slack 1e-10)"),
    }
}

fn check_certifier() -> Outcome {
    let g = TorusGrid::new(2, 64).unwrap();
    let p = Params { mu: 0.01, chi: 0.0, epsilon0: 0.1, c_loc: 1.0, rho_star: 1.0, ..Params::default() };
    let s0 = tg_state(&g, 1.0, 0.0);
    let c = compute_constants(&g, &s0, &p).unwrap();
    let g2 = grad_norm_sq(&g, &s0.u);
    let four_pi2 = TWO_PI * TWO_PI;
    let k0 = p.mu * four_pi2;
    let product = p.rho_star.powf(1.5) * 0.5 * k0;
    let t_loc = p.c_loc / (p.rho_star.powi(3) * 0.5 * k0.powi(3));
    let cert = certify_global_3d(&c, &p);
    let mut half = FluidState::rest(&g, 1.0);
    half.u = taylor_green(&g, 0.5);
    let ch = certify_global_3d(&compute_constants(&g, &half, &p).unwrap(), &p);
    let pass = (c.mass - 1.0).abs() <= 1e-10
        && (c.c0 - 0.5).abs() <= 1e-10
        && (g2 - four_pi2).abs() <= 1e-10
        && (c.j0 - k0).abs() <= 1e-10
        && (c.k0 - k0).abs() <= 1e-10
        && (c.smallness_product - four_pi2 / 200.0).abs() <= 1e-10
        && (cert.product - product).abs() <= 1e-10
        && !cert.certified
        && ((c.t_loc - t_loc) / t_loc).abs() <= 1e-10
        && (ch.product - product / 16.0).abs() <= 1e-10
        && ch.certified;
    Outcome {
        pass,
        detail: format!(
            "M {:.12}, C0 {:.12}, |grad u0|^2 {:.12} (4 pi^2 = {four_pi2:.12}), product {:.10} (certified {}), T_loc {:.10e} (closed form {t_loc:.10e}), half amplitude product {:.6} (certified {})",
            c.mass, c.c0, g2, c.smallness_product, cert.certified, c.t_loc, ch.product, ch.certified
        ),
    }
}

fn check_uniqueness_shadow(div: &mut DivLedger) -> Outcome {
    let g = TorusGrid::new(2, 64).unwrap();
    let p = reference_params();
    let s0 = tg_state(&g, 1.0, 1.0);
    let cfg = SolverConfig { dt: 1e-3, t_end: 1.0, snapshot_every: 50, ..SolverConfig::default() };
    let zero = run_pair(&g, &s0, &Perturbation::zero(&g), &p, &cfg).unwrap();
    let d = Perturbation::velocity(&g, taylor_green(&g, 1e-6));
    let one = run_pair(&g, &s0, &d, &p, &cfg).unwrap();
    let two = run_pair(&g, &s0, &d.scaled(2.0), &p, &cfg).unwrap();
    for r in [&zero, &one, &two] {
        div.add(r.max_div_u);
    }
    let ratio = two.du.last().unwrap() / one.du.last().unwrap();
    let pass = zero.is_identically_zero() && one.sup_du() <= CALIBRATED_SUP_DU && (1.8..=2.2).contains(&ratio);
    Outcome {
        pass,
        detail: format!(
            "zero perturbation: series identically zero = {}; 1e-6 mode: sup_t |du| {:.4e} (calibrated bound {CALIBRATED_SUP_DU:e}); final |du| ratio 2x/1x {ratio:.6} (want [1.8, 2.2])",
            zero.is_identically_zero(),
            one.sup_du()
        ),
    }
}

fn check_desjardins_ratio() -> Outcome {
    let a = desjardins_sweep(&TorusGrid::new(2, 64).unwrap(), 500, 1.0).unwrap();
    let b = desjardins_sweep(&TorusGrid::new(2, 128).unwrap(), 500, 1.0).unwrap();
    let change = (b.max_ratio - a.max_ratio).abs() / a.max_ratio;
    Outcome {
        pass: a.max_ratio.is_finite() && change <= 0.05,
        detail: format!(
            "max ratio {:.6} (N=64, sample {}) vs {:.6} (N=128, sample {}), relative change {change:.3e} (tol 0.05); {} of 500 densities have vacuum",
            a.max_ratio, a.argmax, b.max_ratio, b.argmax, a.with_vacuum
        ),
    }
}

fn main() {
    // `cargo test` forwards harness flags such as `--list`; only run for real.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut div = DivLedger::default();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        println!("[{}] {name}: {} ({secs:.1} s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    record("Taylor-Green validation", &mut || check_taylor_green(&mut div));
    record("energy identity order", &mut || check_energy_order(&mut div));
    record("vacuum robustness", &mut || check_vacuum(&mut div));
    record("Piola identity and Jacobian", &mut || check_piola_jacobian(&mut div));
    record("series/direct deformation", &mut || check_deformation_series(&mut div));
    record("Lagrangian residual convergence", &mut || check_lagrangian_residuals(&mut div));
    record("weighted Poincare", &mut check_weighted_poincare);
    record("certifier arithmetic", &mut check_certifier);
    record("uniqueness shadow", &mut || check_uniqueness_shadow(&mut div));
    record("Desjardins ratio stability", &mut check_desjardins_ratio);
    let o4 = Outcome {
        pass: div.worst <= DIV_TOL,
        detail: format!("max |div u|_2 after any step {:.3e} over {} runs (tol {DIV_TOL:e})", div.worst, div.runs),
    };
    println!("[{}] divergence after projection: {}", if o4.pass { "PASS" } else { "FAIL" }, o4.detail);
    results.push(("divergence after projection", o4));
    let failed: Vec<&str> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!("summary: {}/{} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
