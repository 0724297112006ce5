//! End-to-end runs of the `ndebias` binary on small synthetic bundles.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use ndebias::embedding_io::{load_adapter, load_projector, save_projector};
use ndebias::AdapterParams;
use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = r#"
seed = 3

[rff]
dim = 256

[adapter]
epochs = 12
batch_size = 16
rank = 2

[synth]
n = 900
d = 12
n_items = 100

[[synth.attributes]]
name = "gender"
classes = 2
encoding = "linear"
strength = 1.0

[[synth.attributes]]
name = "age"
classes = 3
encoding = "linear"
strength = 1.0

[[synth.attributes]]
name = "null"
classes = 2
encoding = "linear"
strength = 0.0
"#;

fn setup(config: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("pipeline.toml"), config).unwrap();
    dir
}

fn ndebias(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ndebias"))
        .arg("--config")
        .arg(dir.join("pipeline.toml"))
        .arg("--out")
        .arg(dir.join("out"))
        .arg("--quiet")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = ndebias(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Debias keeps every artifact on non-convergence, so exit 3 is fine here.
fn debias(dir: &Path, args: &[&str]) {
    let out = ndebias(dir, args);
    assert!(
        matches!(out.status.code(), Some(0) | Some(3)),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_attribute_is_a_validation_error() {
    let dir = setup(SMALL);
    ok(dir.path(), &["synth"]);
    let out = ndebias(dir.path(), &["--data.attributes", "income", "probe"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("income"));
}

#[test]
fn probe_separates_planted_from_absent_leakage() {
    let dir = setup(SMALL);
    ok(dir.path(), &["synth"]);
    ok(dir.path(), &["probe"]);
    let summary = json(&dir.path().join("out/probe/summary.json"));
    let gap = |name: &str| {
        summary
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["attribute"] == name)
            .unwrap()["gap"]
            .as_f64()
            .unwrap()
    };
    assert!(gap("gender") >= 0.2, "gender gap {}", gap("gender"));
    assert!(gap("null") <= 0.05, "null gap {}", gap("null"));
    assert!(dir.path().join("out/probe/age.txt").exists());
}

#[test]
fn report_on_probe_only_artifacts_lists_what_is_missing() {
    let dir = setup(SMALL);
    ok(dir.path(), &["synth"]);
    ok(dir.path(), &["report"]);
    let report = json(&dir.path().join("out/report.json"));
    let missing: Vec<&str> = report["missing"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(missing.contains(&"projectors/composite.ndpj"));
    assert!(missing.contains(&"adapter.ndad"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[0]["hits"].is_array());
    assert!(rows[1]["gaps"].as_array().unwrap().iter().all(Value::is_null));
    let text = fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
    assert!(text.contains("n/a"));
}

#[test]
fn lenient_threshold_records_a_single_refinement() {
    let dir = setup(SMALL);
    ok(dir.path(), &["synth"]);
    ok(
        dir.path(),
        &["--data.attributes", "gender", "--inlp.tau", "0.49", "debias"],
    );
    let log = fs::read_to_string(dir.path().join("out/fit.log")).unwrap();
    assert!(log.contains("refinement=1"));
    assert!(!log.contains("refinement=2"));
    let debias = json(&dir.path().join("out/debias.json"));
    assert_eq!(debias["attributes"][0]["refinements"], 1);
}

#[test]
fn zero_epochs_write_the_initial_adapter() {
    let dir = setup(SMALL);
    ok(dir.path(), &["synth"]);
    debias(dir.path(), &["--data.attributes", "gender,age", "debias"]);
    ok(
        dir.path(),
        &[
            "--data.attributes",
            "gender,age",
            "--adapter.epochs",
            "0",
            "train-adapter",
        ],
    );
    let out = dir.path().join("out");
    let (params, _) = load_adapter(&out.join("adapter.ndad")).unwrap();
    let projectors: Vec<DMatrix<f64>> = ["gender", "age"]
        .iter()
        .map(|a| {
            load_projector(&out.join(format!("projectors/{a}.ndpj")))
                .unwrap()
                .matrix
        })
        .collect();
    // Adapter seed 0 offset by the master seed 3.
    let init = AdapterParams::init(projectors, DMatrix::identity(12, 12), 2, 0.01, 3).unwrap();
    assert_eq!(params, init);
}

#[test]
fn full_run_writes_every_artifact_and_guards_frozen_projectors() {
    let dir = setup(SMALL);
    let out = dir.path().join("out");
    ok(dir.path(), &["synth"]);
    ok(dir.path(), &["probe"]);
    let debias = ndebias(dir.path(), &["debias"]);
    // Any attribute may miss tau here; both outcomes keep artifacts.
    assert!(matches!(debias.status.code(), Some(0) | Some(3)));
    for a in ["gender", "age", "null", "composite"] {
        assert!(
            out.join(format!("projectors/{a}.ndpj")).exists(),
            "{a} projector missing"
        );
    }
    assert!(out.join("debiased.ndbs").exists());
    assert!(out.join("fit.log").exists());

    ok(dir.path(), &["train-adapter"]);
    let trace = fs::read_to_string(out.join("adapter_trace.csv")).unwrap();
    let losses: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 13);
    let smooth: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    assert!(smooth.windows(2).all(|w| w[1] <= w[0]), "smoothed loss {smooth:?}");

    ok(dir.path(), &["report"]);
    let report = json(&out.join("report.json"));
    assert!(report["missing"].as_array().unwrap().is_empty());
    for row in report["rows"].as_array().unwrap() {
        assert_eq!(row["gaps"].as_array().unwrap().len(), 3);
        assert!(row["gaps"].as_array().unwrap().iter().all(Value::is_f64));
    }

    // Swap a frozen projector behind the adapter's back.
    let path = out.join("projectors/gender.ndpj");
    let mut rec = load_projector(&path).unwrap();
    rec.matrix = DMatrix::identity(12, 12);
    save_projector(&rec, &path).unwrap();
    let tampered = ndebias(dir.path(), &["report"]);
    assert_eq!(tampered.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&tampered.stderr).contains("checksum"));
}

#[test]
fn unremovable_leak_exits_with_non_convergence_but_keeps_artifacts() {
    let config = r#"
[rff]
dim = 0

[inlp]
max_refinements = 1

[synth]
n = 800
d = 8

[[synth.attributes]]
name = "xor"
classes = 2
encoding = "quadratic-sign"
strength = 1.0
"#;
    let dir = setup(config);
    ok(dir.path(), &["synth"]);
    let out = ndebias(dir.path(), &["debias"]);
    assert_eq!(out.status.code(), Some(3));
    let debias = json(&dir.path().join("out/debias.json"));
    assert_eq!(debias["attributes"][0]["converged"], false);
    assert!(dir.path().join("out/projectors/xor.ndpj").exists());
}
