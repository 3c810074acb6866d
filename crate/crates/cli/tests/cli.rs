use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lanechange(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanechange")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = lanechange(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

const TRAIN: &str = r#"{"data": "data", "dataset": "ds", "hidden": 8, "train": {"epochs": 4}}"#;

/// synth → validate → extract → train → evaluate in `dir`; returns evaluate's stdout.
fn pipeline(dir: &Path, seed: &str) -> Vec<u8> {
    ok(dir, &["synth", "--out", "data", "--count", "2", "--seed", seed, "-q"]);
    let report = ok(dir, &["validate", "data"]);
    let json: serde_json::Value = serde_json::from_slice(&report.stdout).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 2);
    assert!(json[0]["violations"].as_array().unwrap().is_empty());
    ok(dir, &["extract", "data", "--out", "ds", "--seed", seed, "-q"]);
    fs::write(dir.join("train.json"), TRAIN).unwrap();
    ok(dir, &["train", "--config", "train.json", "--out", "model", "--seed", seed, "-q"]);
    ok(dir, &["evaluate", "--checkpoint", "model/model.ckpt", "--data", "data", "--dataset", "ds", "-q"]).stdout
}

#[test]
fn pipeline_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ea = pipeline(a.path(), "7");
    let eb = pipeline(b.path(), "7");
    assert_eq!(ea, eb);
    let text = String::from_utf8(ea).unwrap();
    assert!(text.starts_with("accuracy,precision,recall,tp,fp,tn,fn,threshold,windows\n"));
    for file in [
        "data/01_tracks.csv",
        "data/02_events.json",
        "ds/manifest.json",
        "ds/windows/000000.csv",
        "model/model.ckpt",
        "model/history.csv",
    ] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
    let history = fs::read_to_string(a.path().join("model/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 5);
}

#[test]
fn evaluate_without_dataset_uses_checkpoint_settings() {
    let d = tempfile::tempdir().unwrap();
    let with_dataset = pipeline(d.path(), "3");
    // Train drew its dataset from the extracted manifest, which was built with the same seed.
    let rebuilt = ok(d.path(), &["evaluate", "--checkpoint", "model/model.ckpt", "--data", "data", "-q"]).stdout;
    assert_eq!(with_dataset, rebuilt);
}

#[test]
fn different_seeds_differ() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--out", "a", "--seed", "1", "-q"]);
    ok(d.path(), &["synth", "--out", "b", "--seed", "2", "-q"]);
    assert_ne!(
        fs::read(d.path().join("a/01_tracks.csv")).unwrap(),
        fs::read(d.path().join("b/01_tracks.csv")).unwrap()
    );
}

#[test]
fn ablation_outputs_are_reproducible() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--out", "data", "--seed", "4", "-q"]);
    let spec = r#"{"axis": "cells", "grid": [4, 2], "repeats": 2,
        "base": {"train": {"epochs": 2}}, "source": {"recordings": {"dir": "data"}}}"#;
    fs::write(d.path().join("spec.json"), spec).unwrap();
    ok(d.path(), &["ablate", "--spec", "spec.json", "--out", "r1", "--seed", "9", "-q"]);
    ok(d.path(), &["ablate", "--spec", "spec.json", "--out", "r2", "--seed", "9", "-q"]);
    for f in ["results.csv", "figure.csv"] {
        assert_eq!(fs::read(d.path().join("r1").join(f)).unwrap(), fs::read(d.path().join("r2").join(f)).unwrap());
    }
    let results = fs::read_to_string(d.path().join("r1/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 5);
    let figure = fs::read_to_string(d.path().join("r1/figure.csv")).unwrap();
    let values: Vec<&str> = figure.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(values, ["2", "4"]);
}

#[test]
fn empty_directory_is_a_user_error() {
    let d = tempfile::tempdir().unwrap();
    let out = lanechange(d.path(), &["validate", "."]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no recordings found"));
}

#[test]
fn usage_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    let out = lanechange(d.path(), &["--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(lanechange(d.path(), &["train"]).status.code(), Some(1));
    assert_eq!(
        lanechange(d.path(), &["evaluate", "--checkpoint", "missing.ckpt", "--data", "."]).status.code(),
        Some(1)
    );
}

#[test]
fn help_documents_conventions() {
    let d = tempfile::tempdir().unwrap();
    for sub in ["synth", "validate", "extract", "train", "evaluate", "ablate"] {
        let out = lanechange(d.path(), &[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--seed") && text.contains("threshold"), "{sub}");
    }
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    pipeline(d.path(), "5");
    let path = d.path().join("model/model.ckpt");
    let mut bytes = fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&path, bytes).unwrap();
    let out = lanechange(d.path(), &["evaluate", "--checkpoint", "model/model.ckpt", "--data", "data"]);
    assert_eq!(out.status.code(), Some(1));
}
