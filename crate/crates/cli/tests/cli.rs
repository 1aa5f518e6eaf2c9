use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bd")).args(args).output().expect("bd runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn written(out: &Output) -> Vec<PathBuf> {
    String::from_utf8(out.stdout.clone()).unwrap().lines().map(PathBuf::from).collect()
}

fn report(out: &Output) -> Value {
    let path = written(out).into_iter().find(|p| p.extension().is_some_and(|e| e == "json")).expect("json report");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn equilibrium_writes_csv_with_residual_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "eq.json", r#"{"kind": "equilibrium", "N": 300}"#);
    let out_dir = dir.path().join("nested/out");
    let out = bd(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv_path = written(&out).into_iter().find(|p| p.extension().is_some_and(|e| e == "csv")).unwrap();
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["i", "a_i", "b_i", "Qtilde_i", "Q_i", "balance_residual"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 300);
    let worst = rows.iter().map(|r| r[5].parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert!(worst <= 1e-14, "{worst}");
    let r = report(&out);
    assert_eq!(r["config"]["N"], 300);
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
    assert!(r["failure"].is_null());
}

#[test]
fn override_reaches_the_spectral_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "spectrum.json", r#"{"kind": "spectrum", "N": 100}"#);
    let out_dir = dir.path().join("out");
    let out = bd(&["run", "--config", cfg.to_str().unwrap(), "--override", "N=800", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out);
    assert_eq!(r["config"]["N"], 800);
    assert_eq!(r["result"]["N"], 800);
    assert!(r["result"]["lambda_c"].as_f64().unwrap() > 0.0);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "nl.json",
        r#"{"kind": "nonlinear-decay", "N": 60, "grid": {"t_max": 20, "points": 30},
            "pairs": [{"k": 3.5, "m": 1}], "perturbation": {"p": 7, "amplitude": 0.01}}"#,
    );
    let out_dir = dir.path().join("out");
    let run = || {
        let out = bd(&["run", cfg.to_str().unwrap(), "--seed", "11", "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        written(&out).iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>()
    };
    let first = run();
    let second = run();
    assert_eq!(first.len(), 2);
    assert_eq!(first, second);
}

#[test]
fn unknown_keys_are_listed_and_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"kind": "spectrum", "colour": 1, "grid": {"depth": 2}}"#);
    let out = bd(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("colour") && err.contains("grid.depth"), "{err}");
}

#[test]
fn supercritical_target_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sup.json", r#"{"kind": "equilibrium", "state": {"z_fraction": 1.5}}"#);
    let out = bd(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(report(&out)["failure"]["kind"], "validation");
}

#[test]
fn numerical_failure_still_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "stiff.json",
        r#"{"kind": "simulate", "N": 50, "initial": "monomers",
            "integrator": {"rtol": 1e-300, "atol": 1e-300}, "grid": {"t_max": 1, "points": 4}}"#,
    );
    let out = bd(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let r = report(&out);
    assert_eq!(r["failure"]["kind"], "numerical");
    assert!(r["result"].is_null());
}

#[test]
fn verify_rejects_bad_suite_names() {
    assert_eq!(bd(&["verify", ""]).status.code(), Some(2));
    assert_eq!(bd(&["verify", "medium"]).status.code(), Some(2));
    assert_eq!(bd(&["verify"]).status.code(), Some(2));
}

#[test]
fn missing_config_is_a_validation_error() {
    let out = bd(&["run", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
}
