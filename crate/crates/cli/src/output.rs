//! Persistent formats: diagnostics CSV, binary snapshots with text sidecars,
//! the run manifest, and the blow-up note.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use micropolar::lagrangian::FlowMap;
use micropolar::{DiagnosticsRow, FluidState, ScalarField, TorusGrid, VectorField};
use sha2::{Digest, Sha256};

use crate::config::fmt_f64;

pub const FORMAT_VERSION: u32 = 1;
pub const FIELD_ORDER: [&str; 8] = ["rho", "u1", "u2", "u3", "w1", "w2", "w3", "P"];
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const FLOWMAP_FIELD_ORDER: [&str; 13] =
    ["X1", "X2", "X3", "A11", "A12", "A13", "A21", "A22", "A23", "A31", "A32", "A33", "J"];

/// `git describe`-style identifier captured at build time.
pub fn build_id() -> &'static str {
    env!("MICROPOLAR_BUILD_ID")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn csv_header() -> String {
    DiagnosticsRow::HEADER.join(",")
}

pub fn csv_line(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

/// Writes text to `path` in one call.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn manifest_text(config_text: &str) -> String {
    format!(
        "format_version = {FORMAT_VERSION}\nbuild_id = {}\nconfig_sha256 = {}\n",
        build_id(),
        sha256_hex(config_text.as_bytes())
    )
}

fn snapshot_paths(dir: &Path, index: usize) -> (PathBuf, PathBuf) {
    let stem = format!("snap_{index:06}");
    (dir.join(format!("{stem}.bin")), dir.join(format!("{stem}.hdr")))
}

fn encode(state: &FluidState) -> Vec<u8> {
    let fields: [&ScalarField; 8] = [
        &state.rho,
        &state.u[0],
        &state.u[1],
        &state.u[2],
        &state.omega[0],
        &state.omega[1],
        &state.omega[2],
        &state.p,
    ];
    let mut out = Vec::with_capacity(8 * 8 * state.rho.len());
    for f in fields {
        for v in f.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_snapshot(dir: &Path, index: usize, step: usize, grid: &TorusGrid, state: &FluidState) -> Result<()> {
    let bytes = encode(state);
    let (bin, hdr) = snapshot_paths(dir, index);
    fs::write(&bin, &bytes).with_context(|| format!("writing {}", bin.display()))?;
    let header = format!(
        "format_version = {FORMAT_VERSION}\nd = {}\nN = {}\nt = {}\nstep = {step}\nfields = {}\nsha256 = {}\n",
        grid.dim(),
        grid.n(),
        fmt_f64(state.t),
        FIELD_ORDER.join(","),
        sha256_hex(&bytes)
    );
    write_text(&hdr, &header)
}

/// Flow-map fields at one time: displacement `X - y`, `A` row by row, then `J`.
/// Same layout and sidecar conventions as the state snapshots.
pub fn write_flowmap_snapshot(dir: &Path, index: usize, grid: &TorusGrid, fm: &FlowMap) -> Result<()> {
    let mut fields: Vec<&ScalarField> = fm.displacement.comps().iter().collect();
    fields.extend(fm.inverse.iter().flatten());
    fields.push(&fm.jacobian);
    let mut bytes = Vec::with_capacity(8 * fields.len() * grid.len());
    for f in fields {
        for v in f.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let stem = format!("map_{index:06}");
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, &bytes).with_context(|| format!("writing {}", bin.display()))?;
    let header = format!(
        "format_version = {FORMAT_VERSION}\nd = {}\nN = {}\nt = {}\nB_budget = {}\nfields = {}\nsha256 = {}\n",
        grid.dim(),
        grid.n(),
        fmt_f64(fm.t),
        fmt_f64(fm.budget),
        FLOWMAP_FIELD_ORDER.join(","),
        sha256_hex(&bytes)
    );
    write_text(&dir.join(format!("{stem}.hdr")), &header)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotHeader {
    pub d: usize,
    pub n: usize,
    pub t: f64,
    pub step: usize,
    pub sha256: String,
}

fn parse_header(text: &str, path: &Path) -> Result<SnapshotHeader> {
    let mut h = SnapshotHeader { d: 0, n: 0, t: f64::NAN, step: 0, sha256: String::new() };
    let mut fields_ok = false;
    for line in text.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        let (k, v) = (k.trim(), v.trim());
        match k {
            "d" => h.d = v.parse()?,
            "N" => h.n = v.parse()?,
            "t" => h.t = v.parse()?,
            "step" => h.step = v.parse()?,
            "sha256" => h.sha256 = v.to_string(),
            "fields" => fields_ok = v == FIELD_ORDER.join(","),
            "format_version" => {
                if v != FORMAT_VERSION.to_string() {
                    bail!("{}: unsupported snapshot format {v}", path.display());
                }
            }
            _ => {}
        }
    }
    if !fields_ok || h.d == 0 || h.n == 0 || !h.t.is_finite() || h.sha256.is_empty() {
        bail!("{}: incomplete snapshot header", path.display());
    }
    Ok(h)
}

/// Reads one snapshot and verifies its checksum and shape.
pub fn read_snapshot(dir: &Path, index: usize, grid: &TorusGrid) -> Result<(SnapshotHeader, FluidState)> {
    let (bin, hdr) = snapshot_paths(dir, index);
    let text = fs::read_to_string(&hdr).with_context(|| format!("reading {}", hdr.display()))?;
    let header = parse_header(&text, &hdr)?;
    if header.d != grid.dim() || header.n != grid.n() {
        bail!("{}: grid {}^{} does not match the run's {}^{}", hdr.display(), header.n, header.d, grid.n(), grid.dim());
    }
    let bytes = fs::read(&bin).with_context(|| format!("reading {}", bin.display()))?;
    if sha256_hex(&bytes) != header.sha256 {
        bail!("{}: checksum mismatch", bin.display());
    }
    let len = grid.len();
    if bytes.len() != 8 * 8 * len {
        bail!("{}: expected {} bytes, found {}", bin.display(), 64 * len, bytes.len());
    }
    let mut fields = bytes
        .chunks_exact(8 * len)
        .map(|c| ScalarField::from_vec(c.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()));
    let mut next = || fields.next().unwrap();
    let rho = next();
    let u = VectorField::new(next(), next(), next());
    let omega = VectorField::new(next(), next(), next());
    let p = next();
    Ok((header.clone(), FluidState { t: header.t, rho, u, omega, p }))
}

/// Snapshot indices present in `dir`, ascending and contiguous from zero.
pub fn snapshot_indices(dir: &Path) -> Result<Vec<usize>> {
    let mut idx: Vec<usize> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("snap_")?.strip_suffix(".hdr")?.parse().ok()
        })
        .collect();
    idx.sort_unstable();
    if idx.iter().enumerate().any(|(i, &j)| i != j) {
        bail!("{}: snapshot sequence has gaps", dir.display());
    }
    Ok(idx)
}

/// Streams rows and snapshots of a run to disk.
pub struct RunWriter {
    grid: TorusGrid,
    csv: BufWriter<File>,
    snapshots: PathBuf,
    pub last_row: Option<DiagnosticsRow>,
}

impl RunWriter {
    pub fn create(dir: &Path, grid: &TorusGrid) -> Result<Self> {
        let snapshots = dir.join(SNAPSHOT_DIR);
        fs::create_dir_all(&snapshots).with_context(|| format!("creating {}", snapshots.display()))?;
        let path = dir.join("diagnostics.csv");
        let mut csv = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        writeln!(csv, "{}", csv_header())?;
        Ok(Self { grid: grid.clone(), csv, snapshots, last_row: None })
    }

    pub fn finish(mut self) -> Result<()> {
        self.csv.flush()?;
        Ok(())
    }
}

fn sink(e: impl std::fmt::Display) -> micropolar::Error {
    micropolar::Error::Sink(e.to_string())
}

impl micropolar::RunObserver for RunWriter {
    fn on_row(&mut self, row: &DiagnosticsRow) -> micropolar::Result<()> {
        writeln!(self.csv, "{}", csv_line(&row.values())).map_err(sink)?;
        self.last_row = Some(*row);
        Ok(())
    }

    fn on_snapshot(&mut self, index: usize, step: usize, state: &FluidState) -> micropolar::Result<()> {
        write_snapshot(&self.snapshots, index, step, &self.grid, state).map_err(sink)
    }
}

/// `key = value` block describing the last finite diagnostics.
pub fn blowup_text(reason: &str, last: Option<&DiagnosticsRow>) -> String {
    let mut s = format!("reason = {reason}\n");
    match last {
        Some(row) => {
            for (k, v) in DiagnosticsRow::HEADER.iter().zip(row.values()) {
                let _ = writeln!(s, "{k} = {}", fmt_f64(v));
            }
        }
        None => s.push_str("no finite diagnostics were recorded\n"),
    }
    s
}
