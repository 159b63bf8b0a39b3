use std::path::Path;
use std::process::{Command, Output};

use causal_bart::eval::read_metrics_csv;

fn kfcb(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kfcb"))
        .args(args)
        .arg("--out")
        .arg(out)
        .args(["--trees", "10", "--burn-in", "20", "--draws", "20"])
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn rows(dir: &Path) -> Vec<causal_bart::eval::MetricsRow> {
    read_metrics_csv(std::fs::File::open(dir.join("metrics.csv")).unwrap()).unwrap()
}

#[test]
fn single_replication_writes_one_row_per_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let out = kfcb(
        &[
            "simulate",
            "--scenario",
            "linear-homogeneous",
            "--n",
            "60",
            "--reps",
            "1",
            "--estimators",
            "ps-bart,t-learner",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(dir.path());
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].estimator, "ps-bart");
    assert_eq!(rows[1].estimator, "bart-f0f1");
    assert!(rows.iter().all(|r| r.replication == 0 && r.is_ok()));
    for file in ["aggregate.csv", "summary.json", "manifest.json"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["replication_seeds"].as_array().unwrap().len(), 1);
}

#[test]
fn report_reproduces_the_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out = kfcb(&["simulate", "--n", "50", "--reps", "3", "--estimators", "s-learner"], dir.path());
    assert!(out.status.success());
    let again = dir.path().join("again");
    let status = Command::new(env!("CARGO_BIN_EXE_kfcb"))
        .arg("report")
        .arg(dir.path())
        .arg("--out")
        .arg(&again)
        .args(["--buckets", "3"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(
        std::fs::read(dir.path().join("aggregate.csv")).unwrap(),
        std::fs::read(again.join("aggregate.csv")).unwrap()
    );
}

#[test]
fn ablate_emits_the_five_sub_models() {
    let dir = tempfile::tempdir().unwrap();
    let out = kfcb(&["ablate", "--n", "80", "--reps", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(dir.path());
    assert_eq!(rows.len(), 10);
    let distinct: std::collections::BTreeSet<_> = rows.iter().map(|r| r.estimator.clone()).collect();
    assert_eq!(distinct.len(), 5);
    assert!(distinct.contains("kfold-causal-bart[no-kfold-stage1]"));
}

#[test]
fn unknown_estimator_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = kfcb(&["simulate", "--estimators", "nope"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("metrics.csv").exists());
}

#[test]
fn ihdp_rejects_a_missing_realization_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = kfcb(&["ihdp", "--path", "/nonexistent/ihdp", "--reps", "1"], dir.path());
    assert!(!out.status.success());
}
