use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn journey(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_journey"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(args: &[&str]) {
    let out = journey(args);
    assert!(
        out.status.success(),
        "journey {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// The JSON error record is the last non-empty stderr line.
fn error_record(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| !l.trim().is_empty()).unwrap();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not json ({e}): {stderr}"))
}

/// Small simulated cohort plus dataset in `dir`.
fn small_dataset(dir: &Path) {
    ok(&["--seed", "3", "simulate", "--out", p(&dir.join("sim")), "--patients", "60", "--variables", "4"]);
    ok(&[
        "--seed", "3", "build-dataset",
        "--events", p(&dir.join("sim/events.csv")),
        "--out", p(&dir.join("ds")),
    ]);
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[simulation]\nn_patiens = 10\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = journey(&["--config", p(&cfg), "simulate", "--out", p(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    let record = error_record(&out);
    assert_eq!(record["kind"], "validation");
    assert_eq!(record["exit_code"], 2);
    assert!(record["message"].as_str().unwrap().contains("n_patiens")
        || record["causes"].to_string().contains("n_patiens"));
}

#[test]
fn bad_flag_exits_with_validation_code() {
    let out = journey(&["simulate", "--patients", "many"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_record(&out)["kind"], "validation");
}

#[test]
fn missing_input_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = journey(&[
        "build-dataset",
        "--events", p(&dir.path().join("nope.csv")),
        "--out", p(&dir.path().join("ds")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fixture_miss_is_a_backend_error_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d);
    fs::create_dir_all(d.join("fixtures")).unwrap();
    let out_dir = d.join("fc");
    let out = journey(&[
        "evaluate-forecast",
        "--cohort", p(&d.join("ds/cohort.jsonl")),
        "--dataset", p(&d.join("ds/dataset.jsonl")),
        "--backend", "fixture",
        "--fixtures", p(&d.join("fixtures")),
        "--out", p(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_record(&out)["kind"], "backend");
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "failed");
    assert!(manifest["error"].is_object());
}

#[test]
fn corrupt_dataset_rows_are_reported_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d);
    let dataset = d.join("ds/dataset.jsonl");
    let text = fs::read_to_string(&dataset).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() > 5);
    lines[2] = "{\"partition\": \"test\", truncated";
    fs::write(&dataset, lines.join("\n") + "\n").unwrap();

    let out_dir = d.join("fc");
    ok(&[
        "--seed", "3", "evaluate-forecast",
        "--cohort", p(&d.join("ds/cohort.jsonl")),
        "--dataset", p(&dataset),
        "--partition", "train",
        "--out", p(&out_dir),
    ]);
    let errors = fs::read_to_string(out_dir.join("errors.jsonl")).unwrap();
    let rows: Vec<Value> = errors.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["line"], 3);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["counters"]["corrupt_rows"], 1);
}

#[test]
fn summary_and_manifest_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_dataset(d);
    for name in ["events.csv", "truth.jsonl", "manifest.json", "summary.txt"] {
        assert!(d.join("sim").join(name).exists(), "{name}");
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(d.join("ds/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "build-dataset");
    assert_eq!(manifest["seed"], 3);
    assert!(manifest["counters"].as_object().unwrap().len() > 1);
}
