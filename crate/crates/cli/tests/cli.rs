use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn dero(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dero")).args(args).output().expect("spawn dero")
}

fn ok(args: &[&str]) -> String {
    let out = dero(args);
    assert!(
        out.status.success(),
        "dero {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn ate(metrics: &serde_json::Value) -> (f64, f64) {
    let a = &metrics["ate"];
    (a["translation_rmse"].as_f64().unwrap(), a["rotation_rmse_deg"].as_f64().unwrap())
}

#[test]
fn sim_is_deterministic() {
    let dir = tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["sim", "--profile", "figure8", "--duration", "20", "--seed", "7", "--noise", "office", "--out", p(out)]);
    }
    for name in ["manifest.json", "imu.csv", "radar.jsonl", "groundtruth.csv", "calib.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn stationary_profile_has_zero_dopplers() {
    let dir = tempdir().unwrap();
    ok(&["sim", "--profile", "stationary", "--duration", "5", "--out", p(dir.path())]);
    let text = std::fs::read_to_string(dir.path().join("radar.jsonl")).unwrap();
    let mut targets = 0;
    for line in text.lines() {
        let scan: serde_json::Value = serde_json::from_str(line).unwrap();
        for t in scan["targets"].as_array().unwrap() {
            assert_eq!(t["doppler"].as_f64(), Some(0.0));
            targets += 1;
        }
    }
    assert!(targets > 0);
}

#[test]
fn manifest_records_true_scale() {
    let dir = tempdir().unwrap();
    ok(&["sim", "--duration", "10", "--scale", "1.005,0.995,1.0", "--out", p(dir.path())]);
    let manifest = read_json(&dir.path().join("manifest.json"));
    let scale: Vec<f64> = manifest["truth"]["scale"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert_eq!(scale, [1.005, 0.995, 1.0]);
}

#[test]
fn noiseless_run_from_truth_stays_within_two_centimetres() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    ok(&["sim", "--profile", "figure8", "--duration", "60", "--out", p(&data)]);
    let stdout = ok(&["run", "--dataset", p(&data), "--out", p(&out), "--init", "truth"]);
    let line = stdout.lines().find(|l| l.starts_with("final position error")).expect("error line");
    let err: f64 = line.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(err <= 0.02, "{line}");
    for name in ["trajectory.csv", "diagnostics.csv"] {
        assert!(out.join(name).is_file());
    }
}

#[test]
fn missing_dataset_fails_with_message() {
    let dir = tempdir().unwrap();
    let out = dero(&["run", "--dataset", p(&dir.path().join("nowhere")), "--out", p(&dir.path().join("out"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest not found"));
}

#[test]
fn eval_of_ground_truth_against_itself_is_zero() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("eval");
    ok(&["sim", "--duration", "30", "--out", p(&data)]);
    ok(&["eval", "--est", p(&data.join("groundtruth.csv")), "--gt", p(&data), "--out", p(&out)]);
    let metrics = read_json(&out.join("metrics.json"));
    let (t, r) = ate(&metrics);
    assert!(t <= 1e-9 && r <= 1e-6, "ATE {t} m / {r} deg");
    assert!(out.join("rel_errors.csv").is_file());
}

fn pipeline(dir: &Path, mode: &str) -> serde_json::Value {
    let data = dir.join("data");
    if !data.exists() {
        ok(&[
            "sim", "--profile", "figure8", "--duration", "60", "--seed", "3", "--noise", "office",
            "--scale", "1.02,0.98,1.0", "--yaw-sway", "15", "--out", p(&data),
        ]);
    }
    let run = dir.join(mode);
    ok(&["run", "--dataset", p(&data), "--out", p(&run), "--mode", mode]);
    ok(&["eval", "--est", p(&run.join("trajectory.csv")), "--gt", p(&data), "--out", p(&run)]);
    read_json(&run.join("metrics.json"))
}

#[test]
fn full_mode_beats_no_scale_on_scaled_data() {
    let dir = tempdir().unwrap();
    let full = ate(&pipeline(dir.path(), "full")).0;
    let frozen = ate(&pipeline(dir.path(), "no-scale")).0;
    assert!(full < frozen, "full {full} m vs no-scale {frozen} m");
}

#[test]
fn end_to_end_metrics_are_bit_identical() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    pipeline(a.path(), "full");
    pipeline(b.path(), "full");
    let x = std::fs::read(a.path().join("full/metrics.json")).unwrap();
    let y = std::fs::read(b.path().join("full/metrics.json")).unwrap();
    assert_eq!(x, y);
}
