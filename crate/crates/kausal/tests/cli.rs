use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn kausal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kausal")).args(args).output().expect("binary runs")
}

fn kausal_paths(head: &[&str], pairs: &[(&str, PathBuf)], tail: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kausal"));
    cmd.args(head);
    for (flag, p) in pairs {
        cmd.arg(flag).arg(p);
    }
    cmd.args(tail).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn f(v: &Value) -> f64 {
    v.as_f64().or_else(|| v.as_str().and_then(|s| s.parse().ok())).expect("number")
}

fn anticipation(mode: &str, extra: &[&str]) -> Output {
    let pairs = [
        ("--eta", data("anticipation_eta.json")),
        ("--nu", data("anticipation_nu.json")),
        ("--cost", data("anticipation_cost.json")),
    ];
    let mut tail = vec!["--mode", mode];
    tail.extend_from_slice(extra);
    kausal_paths(&["solve"], &pairs, &tail)
}

#[test]
fn product_plan_is_causal() {
    let out = kausal_paths(&["check"], &[("--coupling", data("product.json"))], &[]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(r["causal"], Value::Bool(true));
    assert_eq!(r["witness"], Value::Null);
    assert_eq!(r["conditional_laws_agree"], Value::Bool(true));
}

#[test]
fn anticipating_plan_has_witness() {
    let out = kausal_paths(&["check"], &[("--coupling", data("anticipating.json"))], &[]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(r["causal"], Value::Bool(false));
    assert_eq!(r["witness"]["t"], 1);
    assert_eq!(r["conditional_laws_agree"], Value::Bool(true));
}

#[test]
fn causal_value_pays_for_anticipation() {
    let causal = json(&anticipation("causal", &[]));
    assert_eq!(causal["status"], "optimal");
    assert!((f(&causal["value"]) - 0.5).abs() <= 1e-9);
    let classic = json(&anticipation("classic", &[]));
    assert!(f(&classic["value"]).abs() <= 1e-9);
}

#[test]
fn exact_mode_prints_rationals() {
    let causal = json(&anticipation("causal", &["--exact"]));
    assert_eq!(causal["value_exact"], "1/2");
    let classic = json(&anticipation("classic", &["--exact"]));
    assert_eq!(classic["value_exact"], "0");
}

#[test]
fn entropic_mode_is_close_to_lp() {
    let out = anticipation("causal-entropic", &["--epsilon", "1e-3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!((f(&json(&out)["value"]) - 0.5).abs() <= 5e-3);
}

#[test]
fn constant_drift_energy() {
    let out = kausal_paths(
        &["gaussian", "verify"],
        &[("--model", data("model_n200.json"))],
        &["--drift", "kind=constant", "a=1", "--checks", "follmer,dual", "--samples", "4000"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let r = json(&out);
    assert_eq!(r["pass"], Value::Bool(true));
    let energy = r["checks"].as_array().unwrap().iter().find(|c| c["check"] == "follmer.energy").unwrap();
    assert!((f(&energy["estimate"]) - 1.0).abs() < 1e-6);
}

#[test]
fn clark_ocone_on_walk() {
    let out = kausal_paths(
        &["gaussian", "verify"],
        &[("--model", data("walk_n10.json"))],
        &["--drift", "kind=zero", "--checks", "clark-ocone"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn bridge_with_verification() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("bridge.json");
    let out = kausal_paths(
        &["bridge"],
        &[("--q1", data("q1_two_points.json")), ("--model", data("model_n200.json")), ("--out", report.clone())],
        &["--verify", "--samples", "4000"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(f(&r["marginal_error"]) <= 1e-9);
    assert!(dir.path().join("bridge.csv").exists());
    assert!(dir.path().join("bridge.timings.json").exists());
}

#[test]
fn reports_are_byte_identical_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str| {
        let out = dir.path().join(format!("v{threads}.json"));
        let status = Command::new(env!("CARGO_BIN_EXE_kausal"))
            .args(["gaussian", "verify", "--drift", "kind=ou", "lambda=1", "--samples", "3000", "--checks"])
            .arg("entropy,follmer,strong")
            .arg("--model")
            .arg(data("model_n200.json"))
            .arg("--out")
            .arg(&out)
            .env("KAUSAL_THREADS", threads)
            .status()
            .unwrap();
        (status.code(), std::fs::read(out).unwrap())
    };
    let a = run("1");
    let b = run("3");
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn usage_and_input_errors_exit_2() {
    assert_eq!(kausal(&["solve", "--bogus"]).status.code(), Some(2));
    let missing = kausal(&["check", "--coupling", "/nonexistent/coupling.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/coupling.json"));
    let drift =
        kausal_paths(&["gaussian", "verify"], &[("--model", data("model_n200.json"))], &["--drift", "kind=bogus"]);
    assert_eq!(drift.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&drift.stderr).contains("--drift"));
    let threads = Command::new(env!("CARGO_BIN_EXE_kausal"))
        .args(["check", "--coupling"])
        .arg(data("product.json"))
        .env("KAUSAL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn pinned_bridge_entropy_is_reported() {
    let out = kausal_paths(&["bridge"], &[("--q1", data("q1_pinned.json"))], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let h = f(&json(&out)["entropy"]);
    assert!(h.is_finite() && h > 0.0);
}
