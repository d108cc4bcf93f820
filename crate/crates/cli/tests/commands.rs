use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_micropolar"))
}

fn exec(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn value(report: &str, key: &str) -> String {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("{key} missing in\n{report}"))
        .to_string()
}

#[test]
fn certify_zero_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.cfg", "[grid]\nN = 16\n[initial]\npreset = rest\n");
    let o = exec(&["certify", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    let r = stdout(&o);
    assert_eq!(value(&r, "smallness_product").parse::<f64>().unwrap(), 0.0);
    assert_eq!(value(&r, "certified"), "true");
    assert_eq!(value(&r, "T_loc"), "inf");
}

#[test]
fn certify_taylor_green_reference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "c.cfg",
        "[grid]\nd = 3\nN = 16\n[params]\nmu = 0.01\nchi = 0\nepsilon0 = 0.1\n[initial]\npreset = taylor_green\namplitude = 1\n",
    );
    let o = exec(&["certify", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    let r = stdout(&o);
    let num = |k: &str| value(&r, k).parse::<f64>().unwrap();
    let k0 = 0.01 * (2.0 * std::f64::consts::PI).powi(2);
    assert!((num("M") - 1.0).abs() < 1e-10);
    assert!((num("C0") - 0.5).abs() < 1e-10);
    assert!((num("K0") - k0).abs() < 1e-10);
    assert!((num("smallness_product") - 0.5 * k0).abs() < 1e-10);
    assert_eq!(value(&r, "certified"), "false");
    assert!((num("T_loc") - 1.0 / (0.5 * k0.powi(3))).abs() / num("T_loc") < 1e-10);
}

#[test]
fn certify_inadmissible_density_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.cfg", "[grid]\nN = 16\n[initial]\ndensity_level = 2\n");
    let o = exec(&["certify", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("admissible: false"));
}

#[test]
fn config_errors_cite_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.cfg", "[params]\n\nmu = -1\n");
    let o = exec(&["certify", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("line 3") && err.contains("mu must be > 0"), "{err}");
}

#[test]
fn zero_horizon_run_writes_header_and_initial_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_cfg(dir.path(), "c.cfg", "[grid]\nN = 8\n[solver]\nt_end = 0\n");
    let o = exec(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert_eq!(csv.trim_end(), micropolar::DiagnosticsRow::HEADER.join(","));
    assert!(out.join("snapshots/snap_000000.bin").exists());
    assert!(!out.join("snapshots/snap_000001.hdr").exists());
    let manifest = fs::read_to_string(out.join("manifest")).unwrap();
    assert!(manifest.contains("format_version = 1") && manifest.contains("config_sha256 = "));
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn reruns_are_byte_identical_and_resolved_cfg_suffices() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let text = "[grid]\nN = 16\n[solver]\ndt = 2e-3\nt_end = 0.02\nsnapshot_every = 5\n[initial]\npreset = vacuum_plateau\nomega_amplitude = 0.5\n";
    let cfg = write_cfg(dir.path(), "c.cfg", text);
    assert_eq!(exec(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]).status.code(), Some(0));
    let first = tree(&a);
    assert_eq!(exec(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(first, tree(&a));
    // the resolved config names its own directory
    fs::remove_dir_all(&a).unwrap();
    let resolved = dir.path().join("resolved.cfg");
    fs::write(&resolved, first.iter().find(|(n, _)| n == "resolved.cfg").unwrap().1.clone()).unwrap();
    let o = exec(&["run", "--config", resolved.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(first, tree(&a));
    let csv = fs::read_to_string(a.join("diagnostics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn blow_up_leaves_a_note() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_cfg(dir.path(), "c.cfg", "[grid]\nN = 8\n[solver]\nt_end = 0.01\n[initial]\namplitude = 0\nomega_amplitude = 1e9\n");
    let o = exec(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let note = fs::read_to_string(out.join("blowup.txt")).unwrap();
    assert!(note.starts_with("reason = solution blew up"), "{note}");
    assert!(out.join("diagnostics.csv").exists());
}

fn run_dir(root: &Path, body: &str) -> String {
    let out = root.join("run");
    let cfg = write_cfg(root, "c.cfg", body);
    let o = exec(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    out.to_string_lossy().into_owned()
}

#[test]
fn lagrangian_of_a_fluid_at_rest_is_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_dir(dir.path(), "[grid]\nN = 8\n[solver]\nt_end = 0.01\nsnapshot_every = 1\n[initial]\npreset = rest\n");
    let o = exec(&["lagrangian", &run, "--window", "0.01"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout(&o);
    for k in ["max_momentum_residual", "max_divergence_residual", "max_microrotation_residual", "max_density_residual"] {
        assert_eq!(value(&r, k).parse::<f64>().unwrap(), 0.0, "{k}");
    }
    let flow = fs::read_to_string(Path::new(&run).join("lagrangian/flowmap.csv")).unwrap();
    assert_eq!(flow.lines().count(), 12);
    for line in flow.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(&v[1..5], &[0.0, 0.0, 0.0, 0.0]);
    }
    let maps = Path::new(&run).join("lagrangian/maps");
    let bin = fs::read(maps.join("map_000010.bin")).unwrap();
    assert_eq!(bin.len(), 13 * 8 * 64);
    let vals: Vec<f64> = bin.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    // zero displacement, A = I, J = 1
    assert!(vals[..3 * 64].iter().all(|&v| v == 0.0));
    assert!(vals[3 * 64..4 * 64].iter().all(|&v| v == 1.0));
    assert!(vals[12 * 64..].iter().all(|&v| v == 1.0));
    assert!(!maps.join("map_000011.hdr").exists());
}

#[test]
fn lagrangian_window_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_dir(dir.path(), "[grid]\nN = 16\n[solver]\nt_end = 0.08\nsnapshot_every = 1\n");
    let short = exec(&["lagrangian", &run, "--window", "0.02"]);
    assert_eq!(short.status.code(), Some(0));
    let r = stdout(&short);
    assert!(value(&r, "max_momentum_residual").parse::<f64>().unwrap() < 1e-3);
    assert!(value(&r, "max_divergence_residual").parse::<f64>().unwrap() < 1e-6);
    let long = exec(&["lagrangian", &run, "--window", "0.08"]);
    assert_eq!(long.status.code(), Some(3));
    let forced = exec(&["lagrangian", &run, "--window", "0.08", "--force"]);
    assert_eq!(forced.status.code(), Some(0));
    assert_eq!(value(&stdout(&forced), "forced"), "true");
}

#[test]
fn lagrangian_needs_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let run = run_dir(dir.path(), "[grid]\nN = 8\n[solver]\nt_end = 0\n");
    assert_eq!(exec(&["lagrangian", &run, "--window", "0.1"]).status.code(), Some(1));
}

#[test]
fn stability_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.cfg", "[grid]\nN = 16\n[solver]\ndt = 2e-3\nt_end = 0.02\nsnapshot_every = 5\n[initial]\nomega_amplitude = 1\n");
    let z = dir.path().join("zero");
    let o = exec(&["stability", "--config", &cfg, "--out", z.to_str().unwrap(), "--perturbation", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(value(&stdout(&o), "zero_is_fixed_point"), "true");
    let csv = fs::read_to_string(z.join("pair.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,du_l2,dw_l2,grad_du_l2,grad_dw_l2,sqrt_rho_du_l2");
    assert_eq!(csv.lines().count(), 4);
    let p = dir.path().join("pert");
    let o = exec(&["stability", "--config", &cfg, "--out", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let sup: f64 = value(&stdout(&o), "sup_du").parse().unwrap();
    assert!(sup > 0.0 && sup < 1e-5, "{sup}");
}

#[test]
fn bad_thread_variable_is_rejected_and_good_one_is_harmless() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.cfg", "[grid]\nN = 8\n");
    let bad = bin().args(["certify", "--config", &cfg]).env("MICROPOLAR_THREADS", "zero").output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    let one = bin().args(["certify", "--config", &cfg]).env("MICROPOLAR_THREADS", "1").output().unwrap();
    let four = bin().args(["certify", "--config", &cfg]).env("MICROPOLAR_THREADS", "4").output().unwrap();
    assert_eq!(one.stdout, four.stdout);
}
