//! End-to-end runs of the `pahy` binary.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pahy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pahy")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn triangle_constants() {
    let v = json(&pahy(&["kernel-constants", "--kernel", "triangle"]));
    assert!((v["psi"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert!((v["mu"].as_f64().unwrap() - 1.0 / 12.0).abs() < 1e-10);
    assert!((v["kappa_tilde"].as_f64().unwrap() - 1.0 / 24.0).abs() < 1e-6);
    assert_eq!(pahy(&["kernel-constants", "--kernel", "boxcar"]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(pahy(&[]).status.code(), Some(2));
    assert_eq!(pahy(&["estimate"]).status.code(), Some(2));
    assert_eq!(pahy(&["estimate", "--input", "x.csv", "--kn-rule", "floor"]).status.code(), Some(2));
}

#[test]
fn non_monotone_times_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "asset,time,value\na,0,1\na,0.6,2\na,0.3,1.5\na,1,2\n").unwrap();
    let out = pahy(&["estimate", "--input", path(&bad)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::write(&bad, "asset,time,value\na,0,one\n").unwrap();
    assert_eq!(pahy(&["estimate", "--input", path(&bad)]).status.code(), Some(3));
}

#[test]
fn randomized_commands_require_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["mc", "--scenario", "2", "--reps", "5"],
        vec!["simulate", "--reps", "1", "--out", path(dir.path())],
        vec!["calibrate", "--scheme", "subset"],
    ] {
        let out = pahy(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
    }
}

#[test]
fn mc_reports_are_byte_identical() {
    let args = ["mc", "--scenario", "2", "--reps", "50", "--seed", "1"];
    let a = pahy(&args);
    let b = pahy(&[&args[..], &["--threads", "2"]].concat());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["reps_completed"], 50);
    assert_eq!(v["histogram_sigma12"]["counts"].as_array().unwrap().len(), 50);
    assert!(v["calibration"].is_object());
}

#[test]
fn simulate_then_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let out = pahy(&["simulate", "--scheme", "subset", "--reps", "2", "--seed", "9", "--n-grid", "4680", "--out", path(&sim)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(sim.join("manifest.json")).unwrap()).unwrap();
    let reps = manifest["reps"].as_array().unwrap();
    assert_eq!(reps.len(), 2);
    let file = sim.join(reps[0]["file"].as_str().unwrap());

    let v = json(&pahy(&["estimate", "--input", path(&file), "--variance", "plugin", "--ci", "0.95"]));
    assert_eq!(v["assets"].as_array().unwrap().len(), 2);
    assert_eq!(v["intervals_per_asset"], serde_json::json!([936, 468]));
    let k_n = v["estimate"]["k_n"].as_u64().unwrap();
    assert_eq!(k_n, (0.15 * 1404f64.sqrt()).ceil() as u64);
    let vm = v["variance"]["vec_matrix"].as_array().unwrap();
    assert_eq!(vm.len(), 4);
    let truth = reps[0]["integrated"][0][0].as_f64().unwrap();
    let est = v["estimate"]["matrix"][0][0].as_f64().unwrap();
    assert!((est - truth).abs() < 0.5 * truth, "{est} vs {truth}");
    let region = &v["confidence"];
    assert_eq!(region["level"], 0.95);
    assert!(!region["intervals"].as_array().unwrap().is_empty());

    // univariate estimator only accepts one asset
    let out = pahy(&["estimate", "--input", path(&file), "--variance", "univariate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn calibration_must_match_the_window() {
    let dir = tempfile::tempdir().unwrap();
    let calib = dir.path().join("calib.json");
    let out = pahy(&[
        "calibrate", "--scheme", "subset", "--n-grid", "4680", "--reps", "100", "--seed", "3", "--out", path(&calib),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ticks = dir.path().join("ticks.csv");
    let mut text = String::from("asset,time,value\n");
    for i in 0..=400 {
        let t = i as f64 / 400.0;
        text += &format!("a,{t},{}\nb,{t},{}\n", (9.0 * t).sin(), (4.0 * t).cos());
    }
    std::fs::write(&ticks, text).unwrap();
    let ok = json(&pahy(&["estimate", "--input", path(&ticks), "--calibration", path(&calib)]));
    assert!(ok["estimate"]["calibration"].is_array());
    let bad = pahy(&["estimate", "--input", path(&ticks), "--calibration", path(&calib), "--theta", "0.2"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn config_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"theta": 0.25, "variance": "plugin", "seed": 4, "subsample": {"eta": 0.6}}"#).unwrap();
    let first = pahy(&["--config", path(&cfg), "--dump-config", "mc"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let dumped = dir.path().join("dumped.json");
    std::fs::write(&dumped, &first.stdout).unwrap();
    let second = pahy(&["--config", path(&dumped), "--dump-config", "mc"]);
    assert_eq!(first.stdout, second.stdout);
    let v: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(v["theta"], 0.25);
    assert_eq!(v["subsample"]["eta"], 0.6);
    assert_eq!(v["kernel"], "triangle");

    // flags win over the file
    let over = json(&pahy(&["--config", path(&cfg), "--dump-config", "mc", "--theta", "0.5"]));
    assert_eq!(over["theta"], 0.5);

    std::fs::write(&cfg, r#"{"theta": 0.25, "tehta": 1}"#).unwrap();
    assert_eq!(pahy(&["--config", path(&cfg), "kernel-constants"]).status.code(), Some(2));
}
