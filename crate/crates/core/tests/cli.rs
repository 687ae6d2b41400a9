use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use vqaa_core::cli::{RunConfig, RunManifest, MANIFEST_FILE};

fn vqaa(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vqaa"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn manifest(dir: &Path) -> RunManifest {
    RunManifest::load(&dir.join(MANIFEST_FILE)).unwrap()
}

#[test]
fn two_site_gap_at_start_is_twice_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = vqaa(&["gap", "--n", "2", "--J", "1.5", "--h", "0.7", "--grid", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&dir.path().join("gap.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][1], "0");
    let gap: f64 = rows[0][3].parse().unwrap();
    assert!((gap - 1.4).abs() < 1e-12, "{gap}");
    let m = manifest(dir.path());
    assert_eq!(m.outputs, vec!["gap.csv".to_string()]);
}

#[test]
fn gap_curves_for_several_couplings_and_dmrg_verify() {
    let dir = tempfile::tempdir().unwrap();
    let o = vqaa(&["gap", "--n", "6", "--J", "1,3", "--grid", "4", "--backend", "mps", "--verify"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_csv(&dir.path().join("gap.csv")).len(), 8);
    for row in read_csv(&dir.path().join("verify.csv")) {
        let diff: f64 = row[3].parse().unwrap();
        assert!(diff < 1e-6, "{row:?}");
    }
}

#[test]
fn config_errors_exit_with_two_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = vqaa(&["gap", "--J", "3,x"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("J"));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "n = 6\nwidth = 3\n").unwrap();
    let o = vqaa(&["vqaa", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("width"));

    let o = vqaa(&["vqaa", "--n", "20", "--verify"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn blackbox_run_writes_outputs_and_reruns_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "n = 6\nJ = 2.0\nT = 2.0\nL = 3\nbudget = 20\nobjective = \"experiment\"\nshots = 200\n").unwrap();
    let first = dir.path().join("first");
    let o = vqaa(
        &["vqaa", "--config", cfg.to_str().unwrap(), "--algo", "blackbox", "--optimizer", "cobyla", "--seed", "7", "--verify"],
        &first,
    );
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&first);
    assert_eq!(m.seed, 7);
    assert_eq!(m.config.n, 6);
    assert!(m.evaluations <= 20 && m.measurements > 0);
    for f in ["trace.csv", "schedule.json", "trace.json", "verify.csv"] {
        assert!(m.outputs.iter().any(|o| o == f), "{f} missing from {:?}", m.outputs);
    }
    let text = fs::read_to_string(first.join(MANIFEST_FILE)).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let embedded: RunConfig = serde_json::from_value(value["config"].clone()).unwrap();
    assert_eq!(embedded, m.config);

    let second = dir.path().join("second");
    let o = Command::new(env!("CARGO_BIN_EXE_vqaa"))
        .args(["rerun", first.join(MANIFEST_FILE).to_str().unwrap(), "--out", second.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), if m.degraded { Some(1) } else { Some(0) });
    for f in &m.outputs {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn unreachable_profile_is_degraded_and_keeps_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = vqaa(
        &["vqaa", "--algo", "profile", "--n", "6", "--J", "3", "--L", "2", "--theta", "0.999", "--tcap", "0.5", "--verify"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let m = manifest(dir.path());
    assert!(m.degraded && !m.flags.is_empty());
    let rows = read_csv(&dir.path().join("profile.csv"));
    assert_eq!(rows.len(), 2);
    assert!(dir.path().join("trace.csv").exists());
}

#[test]
fn spectroscopy_writes_curve_and_derivative() {
    let dir = tempfile::tempdir().unwrap();
    let o = vqaa(&["spectroscopy", "--n", "6", "--J", "3", "--target", "0.7", "--grid", "6", "--method", "ancilla", "--verify"], dir.path());
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_csv(&dir.path().join("curve.csv")).len(), 6);
    let deriv = read_csv(&dir.path().join("derivative.csv"));
    assert!(deriv.iter().all(|r| r[1].parse::<f64>().unwrap() <= 0.0));
    let report = read_csv(&dir.path().join("verify.csv"));
    assert_eq!(report[0][0], "gap_position");
}

#[test]
fn noise_dry_run_and_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let dry = dir.path().join("dry");
    let o = vqaa(&["noise", "--n", "4", "--T", "1", "--L", "1", "--p", "0.05", "--trajectories", "50", "--dry-run"], &dry);
    assert_eq!(o.status.code(), Some(0));
    let rows = read_csv(&dry.join("event_counts.csv"));
    assert_eq!(rows.len(), 50);
    assert_eq!(rows[0][2], "17");

    let ens = dir.path().join("ensemble");
    let o = vqaa(&["noise", "--n", "4", "--T", "1", "--L", "1", "--p", "0.0", "--trajectories", "3", "--verify"], &ens);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_csv(&ens.join("verify.csv"));
    assert!(report[0][3].parse::<f64>().unwrap() < 1e-12);
}
