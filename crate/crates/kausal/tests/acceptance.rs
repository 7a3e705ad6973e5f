//! Acceptance run: one PASS/FAIL line per criterion at full size.
//!
//! Criteria 1 to 11 run in-process through the suite driver. Criterion 12 runs
//! the binary twice with different thread counts and compares the report bytes
//! with each other and with the in-process report.

use std::process::Command;

use kausal::report::render;
use kausal::suite::{run_criterion, suite_report, CriterionResult, SuiteConfig};

const CAUSALITY_BUDGET_SECONDS: f64 = 10.0;
const CLARK_OCONE_BUDGET_SECONDS: f64 = 5.0;

fn line(id: u8, title: &str, pass: bool, detail: &str) -> bool {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!(
        "criterion {id:>2} {verdict} {title}{}",
        if detail.is_empty() { String::new() } else { format!(": {detail}") }
    );
    pass
}

fn describe(result: &CriterionResult, budget: Option<f64>) -> (bool, String) {
    let mut notes: Vec<String> = result
        .failures()
        .iter()
        .map(|r| {
            let mut s = format!("{} = {:.6e} vs {:.6e} (tol {:.3e})", r.name, r.estimate, r.oracle, r.tolerance);
            if let Some(n) = &r.note {
                s.push_str(&format!(" [{n}]"));
            }
            s
        })
        .collect();
    let mut pass = result.pass();
    if let Some(limit) = budget {
        if result.seconds >= limit {
            pass = false;
            notes.push(format!("took {:.2} s, budget {limit} s", result.seconds));
        }
    }
    notes.push(format!("{} checks, {:.2} s", result.records.len(), result.seconds));
    (pass, notes.join("; "))
}

/// Report bytes, CSV bytes and exit code of one run.
type Run = (Vec<u8>, Vec<u8>, Option<i32>);

fn run_binary(dir: &std::path::Path, threads: &str) -> Result<Run, String> {
    let out = dir.join(format!("suite_t{threads}.json"));
    let status = Command::new(env!("CARGO_BIN_EXE_kausal"))
        .args(["suite", "--seed", "42", "--out"])
        .arg(&out)
        .env("KAUSAL_THREADS", threads)
        .status()
        .map_err(|e| e.to_string())?;
    let json = std::fs::read(&out).map_err(|e| e.to_string())?;
    let csv = std::fs::read(dir.join(format!("suite_t{threads}.csv"))).map_err(|e| e.to_string())?;
    Ok((json, csv, status.code()))
}

fn reproducibility(in_process: &[u8]) -> (bool, String) {
    let dir = tempfile::tempdir().expect("temp dir");
    let (a, b) = match (run_binary(dir.path(), "1"), run_binary(dir.path(), "4")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return (false, e),
    };
    let mut notes = Vec::new();
    if a.0 != b.0 {
        notes.push("JSON differs between 1 and 4 threads".to_string());
    }
    if a.1 != b.1 {
        notes.push("CSV differs between 1 and 4 threads".to_string());
    }
    if a.0 != in_process {
        notes.push("binary report differs from in-process report".to_string());
    }
    if a.2 != b.2 || matches!(a.2, Some(2) | Some(3) | None) {
        notes.push(format!("exit codes {:?} and {:?}", a.2, b.2));
    }
    let pass = notes.is_empty();
    notes.push(format!("{} report bytes, exit code {:?}", a.0.len(), a.2));
    (pass, notes.join("; "))
}

fn main() {
    let cfg = SuiteConfig::default();
    let mut results = Vec::new();
    let mut all = true;
    for id in 1..=11u8 {
        match run_criterion(id, &cfg) {
            Ok(result) => {
                let budget = match id {
                    1 => Some(CAUSALITY_BUDGET_SECONDS),
                    8 => Some(CLARK_OCONE_BUDGET_SECONDS),
                    _ => None,
                };
                let (pass, detail) = describe(&result, budget);
                all &= line(id, result.title, pass, &detail);
                results.push(result);
            }
            Err(e) => all &= line(id, "error", false, &e.to_string()),
        }
    }
    let report = render(&suite_report(&cfg, &results));
    let (pass, detail) = reproducibility(report.as_bytes());
    all &= line(12, "byte-identical suite reports across runs and thread counts", pass, &detail);
    if !all {
        std::process::exit(1);
    }
}
