//! Line-oriented `key = value` configuration inside `[section]` headers.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! Rendering prints every key with round-trip precision, which makes
//! `parse(render(c)) == c` hold exactly.

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use micropolar::{Params, SolverConfig, TorusGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Rest,
    TaylorGreen,
    VacuumPlateau,
    Random,
}

impl Preset {
    const ALL: [Preset; 4] = [Preset::Rest, Preset::TaylorGreen, Preset::VacuumPlateau, Preset::Random];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Rest => "rest",
            Preset::TaylorGreen => "taylor_green",
            Preset::VacuumPlateau => "vacuum_plateau",
            Preset::Random => "random",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialConfig {
    pub preset: Preset,
    /// Velocity amplitude (Taylor-Green coefficient, or `L^2` norm for `random`).
    pub amplitude: f64,
    pub omega_amplitude: f64,
    pub density_level: f64,
    pub plateau_width: f64,
    pub plateau_transition: f64,
    pub seed: u64,
    /// Zero disables mollification.
    pub mollify_delta: f64,
    /// Mollified densities are floored at `mollify_delta * mollify_floor_scale`.
    pub mollify_floor_scale: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            preset: Preset::TaylorGreen,
            amplitude: 1.0,
            omega_amplitude: 0.0,
            density_level: 1.0,
            plateau_width: 0.5,
            plateau_transition: 0.1,
            seed: 0,
            mollify_delta: 0.0,
            mollify_floor_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub d: usize,
    pub n: usize,
    pub params: Params,
    /// `csv_cadence` lives here too; it is read from `[output]`.
    pub solver: SolverConfig,
    pub initial: InitialConfig,
    pub directory: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d: 2,
            n: 64,
            params: Params::default(),
            solver: SolverConfig::default(),
            initial: InitialConfig::default(),
            directory: "out".into(),
        }
    }
}

/// A parse or validation failure; `line` is 1-based, 0 when no line applies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}", self.line, self.message)
        } else {
            write!(f, "{}", self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

const SCHEMA: &[(&str, &[&str])] = &[
    ("grid", &["d", "N"]),
    ("params", &["mu", "chi", "gamma", "kappa", "rho_star", "epsilon0", "c_loc"]),
    (
        "solver",
        &["dt", "t_end", "cfl_target", "imex_theta", "snapshot_every", "rho_floor_scale", "cg_tol", "cg_max_iter"],
    ),
    (
        "initial",
        &[
            "preset",
            "amplitude",
            "omega_amplitude",
            "density_level",
            "plateau_width",
            "plateau_transition",
            "seed",
            "mollify_delta",
            "mollify_floor_scale",
        ],
    ),
    ("output", &["directory", "csv_cadence"]),
];

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError { line, message: message.into() }
}

fn float(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v.parse().map_err(|_| err(line, format!("{key}: expected a number, got '{v}'")))?;
    if !x.is_finite() {
        return Err(err(line, format!("{key}: value must be finite, got '{v}'")));
    }
    Ok(x)
}

fn integer<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse()
        .map_err(|_| err(line, format!("{key}: expected a nonnegative integer, got '{v}'")))
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut lines: HashMap<String, usize> = HashMap::new();
    let mut section: Option<(&'static str, &'static [&'static str])> = None;
    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(ln, format!("malformed section header '{line}'")))?
                .trim();
            let found = SCHEMA.iter().find(|(s, _)| *s == name);
            section = Some(*found.ok_or_else(|| err(ln, format!("unknown section [{name}]")))?);
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(ln, format!("expected 'key = value', got '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        let (sec, keys) = section.ok_or_else(|| err(ln, format!("key '{key}' outside any section")))?;
        let key: &'static str = keys
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| err(ln, format!("unknown key '{key}' in [{sec}]")))?;
        if let Some(prev) = lines.insert(format!("{sec}.{key}"), ln) {
            return Err(err(ln, format!("duplicate key '{key}' in [{sec}] (first set on line {prev})")));
        }
        assign(&mut cfg, sec, key, value, ln)?;
    }
    validate(&cfg, &lines)?;
    Ok(cfg)
}

fn assign(cfg: &mut RunConfig, sec: &str, key: &str, v: &str, ln: usize) -> Result<(), ConfigError> {
    let f = |k: &str| float(ln, k, v);
    match (sec, key) {
        ("grid", "d") => cfg.d = integer(ln, key, v)?,
        ("grid", "N") => cfg.n = integer(ln, key, v)?,
        ("params", "mu") => cfg.params.mu = f(key)?,
        ("params", "chi") => cfg.params.chi = f(key)?,
        ("params", "gamma") => cfg.params.gamma = f(key)?,
        ("params", "kappa") => cfg.params.kappa = f(key)?,
        ("params", "rho_star") => cfg.params.rho_star = f(key)?,
        ("params", "epsilon0") => cfg.params.epsilon0 = f(key)?,
        ("params", "c_loc") => cfg.params.c_loc = f(key)?,
        ("solver", "dt") => cfg.solver.dt = f(key)?,
        ("solver", "t_end") => cfg.solver.t_end = f(key)?,
        ("solver", "cfl_target") => cfg.solver.cfl_target = f(key)?,
        ("solver", "imex_theta") => cfg.solver.imex_theta = f(key)?,
        ("solver", "snapshot_every") => cfg.solver.snapshot_every = integer(ln, key, v)?,
        ("solver", "rho_floor_scale") => cfg.solver.rho_floor_scale = f(key)?,
        ("solver", "cg_tol") => cfg.solver.cg_tol = f(key)?,
        ("solver", "cg_max_iter") => cfg.solver.cg_max_iter = integer(ln, key, v)?,
        ("initial", "preset") => {
            cfg.initial.preset = Preset::parse(v).ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                err(ln, format!("preset: unknown '{v}', expected one of {}", names.join(", ")))
            })?
        }
        ("initial", "amplitude") => cfg.initial.amplitude = f(key)?,
        ("initial", "omega_amplitude") => cfg.initial.omega_amplitude = f(key)?,
        ("initial", "density_level") => cfg.initial.density_level = f(key)?,
        ("initial", "plateau_width") => cfg.initial.plateau_width = f(key)?,
        ("initial", "plateau_transition") => cfg.initial.plateau_transition = f(key)?,
        ("initial", "seed") => cfg.initial.seed = integer(ln, key, v)?,
        ("initial", "mollify_delta") => cfg.initial.mollify_delta = f(key)?,
        ("initial", "mollify_floor_scale") => cfg.initial.mollify_floor_scale = f(key)?,
        ("output", "directory") => {
            if v.is_empty() {
                return Err(err(ln, "directory: must not be empty"));
            }
            cfg.directory = v.to_string()
        }
        ("output", "csv_cadence") => cfg.solver.csv_cadence = integer(ln, key, v)?,
        _ => unreachable!("schema and assignment table disagree on {sec}.{key}"),
    }
    Ok(())
}

/// Re-runs module invariants and attributes failures to the offending key.
fn validate(cfg: &RunConfig, lines: &HashMap<String, usize>) -> Result<(), ConfigError> {
    let at = |k: &str| lines.get(k).copied().unwrap_or(0);
    if let Err(e) = TorusGrid::new(cfg.d, cfg.n) {
        let key = if cfg.d == 2 || cfg.d == 3 { "grid.N" } else { "grid.d" };
        return Err(err(at(key), e.to_string()));
    }
    // Both validators open their message with the field name.
    let blame = |section: &str, msg: &str| {
        let body = msg.split_once(": ").map_or(msg, |x| x.1);
        at(&format!("{section}.{}", body.split_whitespace().next().unwrap_or("")))
    };
    if let Err(e) = cfg.params.validate() {
        let msg = e.to_string();
        return Err(err(blame("params", &msg), msg));
    }
    if let Err(e) = cfg.solver.validate() {
        let msg = e.to_string();
        let ln = if msg.contains("conjugate-gradient") {
            at("solver.cg_tol").max(at("solver.cg_max_iter"))
        } else {
            blame("solver", &msg)
        };
        return Err(err(ln, msg));
    }
    let i = &cfg.initial;
    let checks = [
        ("initial.plateau_width", i.plateau_width > 0.0 && i.plateau_width < 1.0, "plateau_width must lie in (0, 1)"),
        ("initial.plateau_transition", i.plateau_transition >= 0.0, "plateau_transition must be >= 0"),
        ("initial.mollify_delta", i.mollify_delta >= 0.0, "mollify_delta must be >= 0"),
        ("initial.mollify_floor_scale", i.mollify_floor_scale > 0.0, "mollify_floor_scale must be > 0"),
    ];
    for (key, ok, msg) in checks {
        if !ok {
            return Err(err(at(key), msg));
        }
    }
    Ok(())
}

/// Round-trip float formatting: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn render_config(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let p = &cfg.params;
    let v = &cfg.solver;
    let i = &cfg.initial;
    let f = fmt_f64;
    let _ = writeln!(s, "[grid]\nd = {}\nN = {}\n", cfg.d, cfg.n);
    let _ = writeln!(
        s,
        "[params]\nmu = {}\nchi = {}\ngamma = {}\nkappa = {}\nrho_star = {}\nepsilon0 = {}\nc_loc = {}\n",
        f(p.mu),
        f(p.chi),
        f(p.gamma),
        f(p.kappa),
        f(p.rho_star),
        f(p.epsilon0),
        f(p.c_loc)
    );
    let _ = writeln!(
        s,
        "[solver]\ndt = {}\nt_end = {}\ncfl_target = {}\nimex_theta = {}\nsnapshot_every = {}\nrho_floor_scale = {}\ncg_tol = {}\ncg_max_iter = {}\n",
        f(v.dt),
        f(v.t_end),
        f(v.cfl_target),
        f(v.imex_theta),
        v.snapshot_every,
        f(v.rho_floor_scale),
        f(v.cg_tol),
        v.cg_max_iter
    );
    let _ = writeln!(
        s,
        "[initial]\npreset = {}\namplitude = {}\nomega_amplitude = {}\ndensity_level = {}\nplateau_width = {}\nplateau_transition = {}\nseed = {}\nmollify_delta = {}\nmollify_floor_scale = {}\n",
        i.preset.name(),
        f(i.amplitude),
        f(i.omega_amplitude),
        f(i.density_level),
        f(i.plateau_width),
        f(i.plateau_transition),
        i.seed,
        f(i.mollify_delta),
        f(i.mollify_floor_scale)
    );
    let _ = write!(s, "[output]\ndirectory = {}\ncsv_cadence = {}\n", cfg.directory, v.csv_cadence);
    s
}
