//! Report values, check records and writers.
//!
//! Floats are written in scientific notation with 17 significant digits, so
//! every value round-trips and equal runs give equal bytes. Non-finite values
//! become the strings `"inf"`, `"-inf"` and `"nan"`. Wall-clock timings go to a
//! sidecar file and never into the report itself.

use std::path::{Path, PathBuf};

use kausal_core::stats::{MCEstimate, ROUNDING_FLOOR};
use serde_json::{Map, Number, Value};

use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("KAUSAL_VERSION");

pub fn float_text(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn num(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(float_text(x).parse::<Number>().expect("formatted float parses"))
    } else {
        Value::String(float_text(x))
    }
}

pub fn opt_num(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

pub fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|x| num(*x)).collect())
}

/// Insertion-ordered object builder.
#[derive(Debug, Default, Clone)]
pub struct Obj(Map<String, Value>);

impl Obj {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.0.insert(key.to_string(), value.into());
        self
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn build(self) -> Value {
        Value::Object(self.0)
    }
}

impl From<Obj> for Value {
    fn from(o: Obj) -> Value {
        o.build()
    }
}

pub fn estimate(e: &MCEstimate) -> Value {
    Obj::new()
        .with("value", num(e.value))
        .with("standard_error", num(e.standard_error))
        .with("samples", e.n_samples)
        .build()
}

/// How a check decides pass or fail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    /// `|estimate − oracle| ≤ tolerance`.
    Within,
    /// `estimate ≤ oracle + tolerance`.
    AtMost,
    /// `estimate ≥ oracle − tolerance`.
    AtLeast,
    /// Exact equality of the two numbers.
    Equal,
}

impl Rule {
    fn name(self) -> &'static str {
        match self {
            Rule::Within => "within",
            Rule::AtMost => "at_most",
            Rule::AtLeast => "at_least",
            Rule::Equal => "equal",
        }
    }
}

/// One line of a verification table.
#[derive(Debug, Clone)]
pub struct CheckRecord {
    pub name: String,
    pub estimate: f64,
    pub oracle: f64,
    pub standard_error: Option<f64>,
    pub tolerance: f64,
    pub rule: Rule,
    pub pass: bool,
    pub note: Option<String>,
}

impl CheckRecord {
    pub fn new(name: impl Into<String>, estimate: f64, rule: Rule, oracle: f64, tolerance: f64) -> Self {
        let pass = match rule {
            Rule::Within => (estimate - oracle).abs() <= tolerance,
            Rule::AtMost => estimate <= oracle + tolerance,
            Rule::AtLeast => estimate >= oracle - tolerance,
            Rule::Equal => estimate == oracle,
        };
        Self { name: name.into(), estimate, oracle, standard_error: None, tolerance, rule, pass, note: None }
    }

    /// `|estimate − oracle| ≤ k·se + ROUNDING_FLOOR + extra`.
    pub fn within_se(name: impl Into<String>, estimate: f64, se: f64, oracle: f64, k: f64, extra: f64) -> Self {
        Self::new(name, estimate, Rule::Within, oracle, k * se + ROUNDING_FLOOR + extra).with_se(se)
    }

    /// `estimate ≥ bound − k·se − ROUNDING_FLOOR`.
    pub fn at_least_se(name: impl Into<String>, estimate: f64, se: f64, bound: f64, k: f64) -> Self {
        Self::new(name, estimate, Rule::AtLeast, bound, k * se + ROUNDING_FLOOR).with_se(se)
    }

    pub fn relative(name: impl Into<String>, estimate: f64, se: f64, oracle: f64, rel: f64) -> Self {
        Self::new(name, estimate, Rule::Within, oracle, rel * oracle.abs()).with_se(se)
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, Rule::Equal, 1.0, 0.0)
    }

    pub fn with_se(mut self, se: f64) -> Self {
        self.standard_error = Some(se);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    pub fn to_json(&self) -> Value {
        let mut o = Obj::new()
            .with("check", self.name.as_str())
            .with("estimate", num(self.estimate))
            .with("oracle", num(self.oracle))
            .with("standard_error", opt_num(self.standard_error))
            .with("rule", self.rule.name())
            .with("tolerance", num(self.tolerance))
            .with("pass", self.pass);
        if let Some(n) = &self.note {
            o.set("note", n.as_str());
        }
        o.build()
    }

    fn csv_row(&self, group: &str) -> [String; 8] {
        [
            group.to_string(),
            self.name.clone(),
            float_text(self.estimate),
            float_text(self.oracle),
            self.standard_error.map(float_text).unwrap_or_default(),
            self.rule.name().to_string(),
            float_text(self.tolerance),
            self.pass.to_string(),
        ]
    }
}

pub fn checks_json(records: &[CheckRecord]) -> Value {
    Value::Array(records.iter().map(CheckRecord::to_json).collect())
}

pub fn failures(records: &[CheckRecord]) -> usize {
    records.iter().filter(|r| !r.pass).count()
}

/// Writes `(group, record)` rows with a header.
pub fn write_csv<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, &'a CheckRecord)>) -> CliResult<()> {
    let err = |e: csv::Error| CliError::invalid(path.display(), e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["group", "check", "estimate", "oracle", "standard_error", "rule", "tolerance", "pass"])
        .map_err(err)?;
    for (group, r) in rows {
        w.write_record(r.csv_row(group)).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))
}

pub fn render(report: &Value) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Writes the report to `out`, or to stdout when no path is given.
pub fn emit(report: &Value, out: Option<&Path>) -> CliResult<()> {
    let text = render(report);
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::io(p.display(), e)),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| CliError::io("stdout", e))
        }
    }
}

pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

/// Wall-clock timings, written next to the report (or to stderr without one).
#[derive(Debug, Default)]
pub struct Timings {
    entries: Vec<(String, f64)>,
}

impl Timings {
    pub fn record(&mut self, name: &str, seconds: f64) {
        self.entries.push((name.to_string(), seconds));
    }

    pub fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = std::time::Instant::now();
        let out = f();
        self.record(name, start.elapsed().as_secs_f64());
        out
    }

    pub fn to_json(&self, threads: usize) -> Value {
        let mut secs = Obj::new();
        for (k, v) in &self.entries {
            secs.set(k, num(*v));
        }
        Obj::new().with("version", VERSION).with("threads", threads).with("wall_clock_seconds", secs).build()
    }

    pub fn emit(&self, out: Option<&Path>) -> CliResult<()> {
        let threads = rayon::current_num_threads();
        match out {
            Some(p) => {
                let path = sidecar(p, ".timings.json");
                std::fs::write(&path, render(&self.to_json(threads))).map_err(|e| CliError::io(path.display(), e))
            }
            None => {
                for (k, v) in &self.entries {
                    eprintln!("time {k}: {v:.3} s");
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, 0.0] {
            let t = float_text(x);
            assert_eq!(t.parse::<f64>().unwrap(), x);
            assert_eq!(t.split('e').next().unwrap().replace(['-', '.'], "").len(), 17);
        }
        assert_eq!(num(f64::INFINITY), Value::String("inf".into()));
        assert_eq!(num(0.5).to_string(), "5.0000000000000000e-1");
    }

    #[test]
    fn rules() {
        assert!(CheckRecord::new("a", 1.0, Rule::Within, 1.05, 0.1).pass);
        assert!(!CheckRecord::new("a", 1.2, Rule::AtMost, 1.0, 0.1).pass);
        assert!(CheckRecord::at_least_se("a", 0.9, 0.05, 1.0, 3.0).pass);
        assert!(!CheckRecord::flag("a", false).pass);
        assert!(CheckRecord::within_se("a", 1.0, 0.0, 1.0, 3.0, 0.0).pass);
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar(Path::new("/x/report.json"), ".csv"), PathBuf::from("/x/report.csv"));
        assert_eq!(sidecar(Path::new("r"), ".timings.json"), PathBuf::from("r.timings.json"));
    }
}
