use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use micropolar::init::{microrotation_pattern, random_solenoidal, random_vector, taylor_green, vacuum_plateau};
use micropolar::lagrangian::{integrate_flow_map, jacobian_deviation, lagrangian_residual, piola_residual};
use micropolar::stability::{mollified_data, run_pair, Perturbation};
use micropolar::state::{certify_global_3d, check_admissibility, compute_constants};
use micropolar::{Error, FluidState, TorusGrid};

use crate::config::{fmt_f64, parse_config, render_config, Preset, RunConfig};
use crate::output::{
    blowup_text, csv_line, manifest_text, read_snapshot, snapshot_indices, write_flowmap_snapshot, write_text, RunWriter, SNAPSHOT_DIR,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INADMISSIBLE: i32 = 2;
pub const EXIT_WINDOW: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

/// Polynomial degree of the `random` preset.
const RANDOM_DEGREE: i64 = 4;

pub fn grid_of(cfg: &RunConfig) -> Result<TorusGrid> {
    Ok(TorusGrid::new(cfg.d, cfg.n)?)
}

/// Initial state described by `[initial]`, mollified when `mollify_delta > 0`.
pub fn initial_state(cfg: &RunConfig, grid: &TorusGrid) -> Result<FluidState> {
    let i = &cfg.initial;
    let mut s = FluidState::rest(grid, i.density_level);
    match i.preset {
        Preset::Rest => {}
        Preset::TaylorGreen | Preset::VacuumPlateau => {
            s.u = taylor_green(grid, i.amplitude);
            s.omega = microrotation_pattern(grid, i.omega_amplitude);
            if i.preset == Preset::VacuumPlateau {
                s.rho = vacuum_plateau(grid, i.density_level, i.plateau_width, i.plateau_transition);
            }
        }
        Preset::Random => {
            s.u = random_solenoidal(grid, i.amplitude, RANDOM_DEGREE, i.seed);
            s.omega = random_vector(grid, i.omega_amplitude, RANDOM_DEGREE, i.seed.wrapping_add(1));
        }
    }
    if i.mollify_delta > 0.0 {
        s = mollified_data(grid, &s, i.mollify_delta, i.mollify_floor_scale, cfg.params.rho_star)?;
    }
    Ok(s)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

/// `key: value` report and exit code.
pub fn cmd_certify(cfg: &RunConfig) -> Result<(String, i32)> {
    let grid = grid_of(cfg)?;
    let s = initial_state(cfg, &grid)?;
    let report = check_admissibility(&grid, &s, &cfg.params);
    let mut out = String::new();
    if !report.passed() {
        let _ = writeln!(out, "admissible: false\nviolations: {report}");
        return Ok((out, EXIT_INADMISSIBLE));
    }
    let c = compute_constants(&grid, &s, &cfg.params)?;
    let cert = certify_global_3d(&c, &cfg.params);
    let _ = writeln!(out, "admissible: true");
    for (k, v) in [("M", c.mass), ("C0", c.c0), ("J0", c.j0), ("K0", c.k0), ("smallness_product", c.smallness_product)] {
        let _ = writeln!(out, "{k}: {}", fmt_f64(v));
    }
    let _ = writeln!(out, "epsilon0: {}", fmt_f64(cfg.params.epsilon0));
    let _ = writeln!(out, "certified: {}", cert.certified);
    let _ = writeln!(out, "smallness_required: {}", cfg.d == 3);
    let _ = writeln!(out, "T_loc: {}", fmt_f64(c.t_loc));
    Ok((out, EXIT_OK))
}

#[derive(Debug)]
pub struct RunReport {
    pub exit: i32,
    pub message: String,
    pub directory: PathBuf,
}

/// Runs the configured simulation into `out` (or the configured directory).
pub fn cmd_run(cfg: &RunConfig, out: Option<&Path>) -> Result<RunReport> {
    let mut cfg = cfg.clone();
    if let Some(o) = out {
        cfg.directory = o.to_string_lossy().into_owned();
    }
    let dir = PathBuf::from(&cfg.directory);
    let grid = grid_of(&cfg)?;
    let s0 = initial_state(&cfg, &grid)?;
    let report = check_admissibility(&grid, &s0, &cfg.params);
    if !report.passed() {
        return Ok(RunReport { exit: EXIT_INADMISSIBLE, message: format!("initial data not admissible: {report}"), directory: dir });
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let resolved = render_config(&cfg);
    write_text(&dir.join("resolved.cfg"), &resolved)?;
    write_text(&dir.join("manifest"), &manifest_text(&resolved))?;
    let blowup = dir.join("blowup.txt");
    if blowup.exists() {
        fs::remove_file(&blowup)?;
    }
    let mut writer = RunWriter::create(&dir, &grid)?;
    let result = micropolar::run(&grid, &s0, &cfg.params, &cfg.solver, &mut writer);
    let last = writer.last_row;
    writer.finish()?;
    match result {
        Ok(o) => {
            let st = &o.stats;
            let message = format!(
                "steps: {}\nsnapshots: {}\nt_final: {}\nmax_div_u: {}\nrho_range: [{}, {}]\nmax_mass_drift: {}\nmax_preclip_violation: {}\nmax_energy_increase: {}\n",
                st.steps,
                st.snapshots,
                fmt_f64(o.state.t),
                fmt_f64(st.max_div_u),
                fmt_f64(st.min_rho),
                fmt_f64(st.max_rho),
                fmt_f64(st.max_mass_drift),
                fmt_f64(st.max_preclip_violation),
                fmt_f64(st.max_energy_increase)
            );
            Ok(RunReport { exit: EXIT_OK, message, directory: dir })
        }
        Err(e @ Error::BlowUp { .. }) => {
            write_text(&blowup, &blowup_text(&e.to_string(), last.as_ref()))?;
            Ok(RunReport { exit: EXIT_ERROR, message: e.to_string(), directory: dir })
        }
        Err(e) => Err(e.into()),
    }
}

/// Flow map and Lagrangian residuals from a stored run.
pub fn cmd_lagrangian(run_dir: &Path, window: f64, force: bool, out: Option<&Path>) -> Result<(String, i32)> {
    if !(window > 0.0) || !window.is_finite() {
        bail!("window must be a positive time, got {window}");
    }
    let cfg = load_config(&run_dir.join("resolved.cfg"))?;
    let grid = grid_of(&cfg)?;
    let snap_dir = run_dir.join(SNAPSHOT_DIR);
    let indices = snapshot_indices(&snap_dir)?;
    let mut states = Vec::new();
    for i in indices {
        let (h, s) = read_snapshot(&snap_dir, i, &grid)?;
        if h.t > window * (1.0 + 1e-12) {
            break;
        }
        states.push(s);
    }
    if states.len() < 2 {
        bail!("need at least two snapshots with t <= {window} in {}", snap_dir.display());
    }
    let last_t = states.last().unwrap().t;
    if last_t < window * (1.0 - 1e-9) {
        bail!("snapshots end at t = {last_t}, before the requested window {window}");
    }
    let history = integrate_flow_map(&grid, &states, window, 1)?;
    if history.crossing <= window && !force {
        let msg = format!(
            "budget int ||grad u||_inf reaches 1/2 at t = {} before the window {window}; rerun with --force to proceed\n",
            fmt_f64(history.crossing)
        );
        return Ok((msg, EXIT_WINDOW));
    }
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("lagrangian"));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut flow = String::from("t,B_budget,piola_residual,jacobian_deviation,inverse_defect,within_window\n");
    for m in &history.maps {
        let vals = [m.t, m.budget, piola_residual(&grid, m), jacobian_deviation(m), m.inverse_defect()];
        let _ = writeln!(flow, "{},{}", csv_line(&vals), u8::from(m.within_window()));
    }
    write_text(&out_dir.join("flowmap.csv"), &flow)?;
    let map_dir = out_dir.join("maps");
    fs::create_dir_all(&map_dir).with_context(|| format!("creating {}", map_dir.display()))?;
    for (i, m) in history.maps.iter().enumerate() {
        write_flowmap_snapshot(&map_dir, i, &grid, m)?;
    }

    let inside = history.maps.iter().take_while(|m| m.within_window()).count();
    let mut summary = format!(
        "window: {}\ncrossing: {}\nmaps: {}\nmaps_within_window: {inside}\nforced: {}\n",
        fmt_f64(window),
        fmt_f64(history.crossing),
        history.maps.len(),
        force && history.crossing <= window
    );
    // The stored pressure sits at interval midpoints only when every step is saved.
    let residuals_valid = cfg.solver.snapshot_every == 1;
    let _ = writeln!(summary, "snapshots_every_step: {residuals_valid}");
    if inside >= 2 {
        let rep = lagrangian_residual(&grid, &states[..inside], &history.maps[..inside], &cfg.params)?;
        let mut csv = String::from("t,momentum,divergence,microrotation,density\n");
        for r in &rep.rows {
            let _ = writeln!(csv, "{}", csv_line(&[r.t, r.momentum, r.divergence, r.microrotation, r.density]));
        }
        write_text(&out_dir.join("residuals.csv"), &csv)?;
        let m = rep.max;
        let _ = write!(
            summary,
            "max_momentum_residual: {}\nmax_divergence_residual: {}\nmax_microrotation_residual: {}\nmax_density_residual: {}\n",
            fmt_f64(m.momentum),
            fmt_f64(m.divergence),
            fmt_f64(m.microrotation),
            fmt_f64(m.density)
        );
    }
    write_text(&out_dir.join("summary.txt"), &summary)?;
    Ok((summary, EXIT_OK))
}

/// Unit Taylor-Green velocity mode used as the perturbation shape.
pub fn perturbation_shape(grid: &TorusGrid, amplitude: f64) -> Perturbation {
    if amplitude == 0.0 {
        return Perturbation::zero(grid);
    }
    Perturbation::velocity(grid, taylor_green(grid, amplitude))
}

/// Paired run; writes `pair.csv` and checks the report's invariants.
pub fn cmd_stability(cfg: &RunConfig, amplitude: f64, out: Option<&Path>) -> Result<(String, i32)> {
    if !amplitude.is_finite() {
        bail!("perturbation amplitude must be finite");
    }
    let grid = grid_of(cfg)?;
    let s0 = initial_state(cfg, &grid)?;
    let report = check_admissibility(&grid, &s0, &cfg.params);
    if !report.passed() {
        return Ok((format!("initial data not admissible: {report}\n"), EXIT_INADMISSIBLE));
    }
    let d = perturbation_shape(&grid, amplitude);
    let other = d.apply(&s0);
    if !check_admissibility(&grid, &other, &cfg.params).passed() {
        return Ok(("perturbed data not admissible\n".into(), EXIT_INADMISSIBLE));
    }
    let rep = run_pair(&grid, &s0, &d, &cfg.params, &cfg.solver)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&cfg.directory));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut csv = micropolar::stability::PairReport::HEADER.join(",");
    csv.push('\n');
    for row in rep.rows() {
        csv.push_str(&csv_line(&row));
        csv.push('\n');
    }
    write_text(&dir.join("pair.csv"), &csv)?;
    let sane = rep.rows().all(|r| r[1..].iter().all(|v| v.is_finite() && *v >= 0.0));
    let zero_ok = rep.perturbation != 0.0 || rep.is_identically_zero();
    let summary = format!(
        "perturbation: {}\nsup_du: {}\nfinal_du: {}\nmax_div_u: {}\nzero_is_fixed_point: {}\n",
        fmt_f64(rep.perturbation),
        fmt_f64(rep.sup_du()),
        fmt_f64(rep.du.last().copied().unwrap_or(0.0)),
        fmt_f64(rep.max_div_u),
        if rep.perturbation == 0.0 { rep.is_identically_zero().to_string() } else { "n/a".into() }
    );
    let exit = if sane && zero_ok { EXIT_OK } else { EXIT_INVARIANT };
    Ok((summary, exit))
}
