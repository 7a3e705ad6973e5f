//! Argument parsing and the subcommand drivers.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use kausal_core::bridge::{mikami_value_check, solve_schrodinger_bridge, BridgeOptions, BridgeSolution, TerminalStep};
use kausal_core::causality::{causality_constraints, generated_filtration, is_causal, is_causal_via_conditional_laws};
use kausal_core::gaussian_lab::{DriftSpec, GaussianPathModel, IncrementModel};
use kausal_core::path_space::{Coupling, PathMeasure};
use kausal_core::scalar::{Rational, Scalar};
use kausal_core::transport_solver::simplex::SimplexOptions;
use kausal_core::transport_solver::{
    dual_violation, solve_causal_entropic, solve_causal_mk, solve_classic_mk, CostMatrix, EntropicOptions, SolveStatus,
    TransportSolution,
};
use serde_json::Value;

use crate::checks::{
    bridge_solution_records, bridge_verify_records, drift_label, parse_drift, run_gaussian_check, GaussianCheck,
    GaussianSettings,
};
use crate::error::{CliError, CliResult, EXIT_OK};
use crate::formats::{load_cost, load_coupling, load_marginals, load_measure, load_model, Weight};
use crate::report::{
    self, checks_json, emit, failures, num, nums, sidecar, write_csv, CheckRecord, Obj, Timings, VERSION,
};
use crate::suite::{self, SuiteConfig, DEFAULT_SAMPLES, DEFAULT_SEED};

/// Largest path count per side for exact arithmetic.
pub const EXACT_MAX_PATHS: usize = 64;
/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "KAUSAL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "kausal", version = env!("KAUSAL_VERSION"), about = "Causal transport on path spaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a classic, causal or entropic causal transport problem.
    Solve(SolveArgs),
    /// Decide whether a coupling is causal.
    Check(CheckArgs),
    /// Monte Carlo checks on the Gaussian path model.
    #[command(subcommand)]
    Gaussian(GaussianCommand),
    /// Solve a Schrödinger bridge and optionally simulate its control.
    Bridge(BridgeArgs),
    /// Run the full verification battery.
    Suite(SuiteArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Classic,
    Causal,
    CausalEntropic,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Source measure file
    #[arg(long)]
    pub eta: PathBuf,
    /// Target measure file
    #[arg(long)]
    pub nu: PathBuf,
    /// Cost matrix file
    #[arg(long)]
    pub cost: PathBuf,
    #[arg(long, value_enum, default_value = "causal")]
    pub mode: Mode,
    /// Entropic weight; required by causal-entropic.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Rational arithmetic (LP modes only).
    #[arg(long)]
    pub exact: bool,
    /// Report path; stdout when absent. CSV and timings go next to it
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Coupling file
    #[arg(long)]
    pub coupling: PathBuf,
    /// Report path; stdout when absent. CSV and timings go next to it
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum GaussianCommand {
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Model file; defaults to N=200, d=1, Gaussian increments.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `kind=constant a=1`, `kind=ou lambda=1`, `kind=tanh scale=1` or `kind=zero`.
    #[arg(long, num_args = 1.., required = true)]
    pub drift: Vec<String>,
    /// Comma-separated checks; all by default.
    #[arg(long, value_delimiter = ',')]
    pub checks: Vec<GaussianCheck>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    /// Report path; stdout when absent. CSV and timings go next to it
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TerminalArg {
    Exact,
    Euler,
}

#[derive(Debug, Args)]
pub struct BridgeArgs {
    /// Terminal law (grid file)
    #[arg(long)]
    pub q1: PathBuf,
    /// Initial law; the origin by default.
    #[arg(long)]
    pub q0: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_sweeps: usize,
    /// Simulate the control and compare its cost with the entropy.
    #[arg(long)]
    pub verify: bool,
    /// Model for the simulation; defaults to N=200 Gaussian steps.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "exact")]
    pub terminal_step: TerminalArg,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    /// Report path; stdout when absent. CSV and timings go next to it
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SuiteArgs {
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    /// Comma-separated criterion ids (1–11); all by default.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=11))]
    pub criteria: Vec<u8>,
    /// Report path; stdout when absent. CSV and timings go next to it
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses argv, runs the command and returns the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match configure_threads().and_then(|_| run(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("kausal: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::invalid(THREADS_ENV, format!("{raw:?} is not a positive integer")))?;
    // a second initialization in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Solve(a) => solve(&a),
        Command::Check(a) => check(&a),
        Command::Gaussian(GaussianCommand::Verify(a)) => verify(&a),
        Command::Bridge(a) => bridge(&a),
        Command::Suite(a) => run_suite(&a),
    }
}

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

fn opt_path(p: Option<&PathBuf>) -> Value {
    p.map_or(Value::Null, |p| path_value(p))
}

/// Scalars print as numbers in float mode and as exact strings in rational mode.
trait Emit: Scalar {
    fn emit(&self) -> Value;
}

impl Emit for f64 {
    fn emit(&self) -> Value {
        num(*self)
    }
}

impl Emit for Rational {
    fn emit(&self) -> Value {
        Value::String(self.to_string())
    }
}

fn emit_vec<S: Emit>(v: &[S]) -> Value {
    Value::Array(v.iter().map(Emit::emit).collect())
}

fn matrix<S: Emit>(c: &Coupling<S>) -> Value {
    Value::Array((0..c.rows()).map(|i| emit_vec(c.row(i))).collect())
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::Unbounded => "unbounded",
        SolveStatus::NonConvergence => "non_convergence",
    }
}

fn solution_json<S: Emit>(sol: &TransportSolution<S>, violation: Option<f64>) -> Obj {
    let mut o = Obj::new().with("status", status_name(sol.status));
    if sol.is_optimal() {
        o.set("value", num(sol.value.to_f64()));
        if S::EXACT {
            o.set("value_exact", sol.value.emit());
        }
    } else if sol.status == SolveStatus::Infeasible {
        o.set("value", num(f64::INFINITY));
    } else {
        o.set("value", Value::Null);
    }
    o.set("gap", num(sol.gap));
    o.set("iterations", sol.iterations);
    o.set("marginal_residual", num(sol.marginal_residual));
    o.set("constraint_residual", num(sol.constraint_residual));
    if let Some(v) = violation {
        o.set("dual_violation", num(v));
    }
    o.set("plan", sol.plan.as_ref().map_or(Value::Null, matrix));
    o.set(
        "dual",
        sol.dual.as_ref().map_or(Value::Null, |d| {
            Obj::new()
                .with("row_potentials", emit_vec(&d.row_potentials))
                .with("col_potentials", emit_vec(&d.col_potentials))
                .with("multipliers", emit_vec(&d.multipliers))
                .build()
        }),
    );
    o
}

fn solve_lp<S: Weight + Emit>(a: &SolveArgs, cost: &CostMatrix) -> CliResult<Obj> {
    let eta: PathMeasure<S> = load_measure(&a.eta)?;
    let nu: PathMeasure<S> = load_measure(&a.nu)?;
    if S::EXACT && (eta.len() > EXACT_MAX_PATHS || nu.len() > EXACT_MAX_PATHS) {
        return Err(CliError::invalid(
            "--exact",
            format!("exact mode allows at most {EXACT_MAX_PATHS} paths per side"),
        ));
    }
    let opts = SimplexOptions::default();
    let ctx = "solve";
    let (sol, set) = match a.mode {
        Mode::Classic => (solve_classic_mk(&eta, &nu, cost, &opts).map_err(|e| CliError::core(ctx, e))?, None),
        _ => {
            let set = causality_constraints(eta.space(), nu.space(), &eta).map_err(|e| CliError::core(ctx, e))?;
            (solve_causal_mk(&eta, &nu, cost, &opts).map_err(|e| CliError::core(ctx, e))?, Some(set))
        }
    };
    let violation = sol.dual.as_ref().map(|d| dual_violation(cost, set.as_ref(), d));
    finish_solution(&sol, solution_json(&sol, violation))
}

fn finish_solution<S: Scalar>(sol: &TransportSolution<S>, o: Obj) -> CliResult<Obj> {
    if sol.status == SolveStatus::NonConvergence {
        return Err(CliError::NonConvergence {
            context: "solve".into(),
            message: format!("solver stopped after {} iterations", sol.iterations),
        });
    }
    Ok(o)
}

fn solve(a: &SolveArgs) -> CliResult<()> {
    let mut timings = Timings::default();
    let cost = load_cost(&a.cost)?;
    let body = timings.time("solve", || -> CliResult<Obj> {
        match (a.mode, a.exact) {
            (Mode::CausalEntropic, true) => {
                Err(CliError::invalid("--exact", "the entropic solver runs in floating point"))
            }
            (Mode::CausalEntropic, false) => {
                let eps = a.epsilon.ok_or_else(|| CliError::invalid("--epsilon", "required by causal-entropic"))?;
                let eta: PathMeasure<f64> = load_measure(&a.eta)?;
                let nu: PathMeasure<f64> = load_measure(&a.nu)?;
                let sol = solve_causal_entropic(&eta, &nu, &cost, eps, &EntropicOptions::default())
                    .map_err(|e| CliError::core("--epsilon", e))?;
                finish_solution(&sol, solution_json(&sol, None))
            }
            (_, true) => solve_lp::<Rational>(a, &cost),
            (_, false) => solve_lp::<f64>(a, &cost),
        }
    })?;
    let mode = match a.mode {
        Mode::Classic => "classic",
        Mode::Causal => "causal",
        Mode::CausalEntropic => "causal-entropic",
    };
    let config = Obj::new()
        .with("eta", path_value(&a.eta))
        .with("nu", path_value(&a.nu))
        .with("cost", path_value(&a.cost))
        .with("mode", mode)
        .with("epsilon", report::opt_num(a.epsilon))
        .with("exact", a.exact);
    let mut report = Obj::new().with("command", "solve").with("version", VERSION).with("config", config);
    for (k, v) in body.build().as_object().expect("object").iter() {
        report.set(k, v.clone());
    }
    emit(&report.build(), a.out.as_deref())?;
    timings.emit(a.out.as_deref())
}

fn causality_report<S: Weight>(gamma: &Coupling<S>) -> CliResult<(Obj, bool)> {
    let ctx = "check";
    let verdict = is_causal(gamma).map_err(|e| CliError::core(ctx, e))?;
    let laws = is_causal_via_conditional_laws(gamma).map_err(|e| CliError::core(ctx, e))?;
    let mut filtration = Vec::new();
    for t in 1..=gamma.first_space().steps() {
        let parts = generated_filtration(gamma, t).map_err(|e| CliError::core(ctx, e))?;
        filtration.push(Obj::new().with("t", t).with("atoms", serde_json::to_value(parts).expect("indices")).build());
    }
    let witness = verdict.witness.map_or(Value::Null, |w| {
        Obj::new().with("t", w.t).with("omega", w.omega).with("omega_prime", w.omega_prime).with("atom", w.atom).build()
    });
    let o = Obj::new()
        .with("causal", verdict.causal)
        .with("witness", witness)
        .with("conditional_laws_agree", laws == verdict.causal)
        .with("generated_filtration", Value::Array(filtration));
    Ok((o, laws == verdict.causal))
}

fn check(a: &CheckArgs) -> CliResult<()> {
    let mut timings = Timings::default();
    let float: Coupling<f64> = load_coupling(&a.coupling)?;
    let exact = float.rows() <= EXACT_MAX_PATHS && float.cols() <= EXACT_MAX_PATHS;
    let (body, agree) = timings.time("check", || {
        if exact {
            causality_report(&load_coupling::<Rational>(&a.coupling)?)
        } else {
            causality_report(&float)
        }
    })?;
    let config =
        Obj::new().with("coupling", path_value(&a.coupling)).with("arithmetic", if exact { "exact" } else { "float" });
    let mut report = Obj::new().with("command", "check").with("version", VERSION).with("config", config);
    for (k, v) in body.build().as_object().expect("object").iter() {
        report.set(k, v.clone());
    }
    emit(&report.build(), a.out.as_deref())?;
    timings.emit(a.out.as_deref())?;
    if agree {
        Ok(())
    } else {
        Err(CliError::ChecksFailed { failed: 1, total: 1 })
    }
}

fn default_model() -> GaussianPathModel {
    GaussianPathModel::unit_horizon(200, 1, IncrementModel::Gaussian).expect("valid default model")
}

fn model_json(m: &GaussianPathModel) -> Value {
    Obj::new()
        .with("N", m.steps())
        .with("dt", num(m.dt()))
        .with("d", m.dim())
        .with(
            "increment_model",
            match m.increments() {
                IncrementModel::Gaussian => "gaussian",
                IncrementModel::Rademacher => "rademacher",
            },
        )
        .build()
}

fn drift_json(d: &DriftSpec) -> Value {
    Value::String(drift_label(d))
}

fn with_csv(out: Option<&Path>, rows: &[(String, CheckRecord)]) -> CliResult<()> {
    if let Some(p) = out {
        write_csv(&sidecar(p, ".csv"), rows.iter().map(|(g, r)| (g.as_str(), r)))?;
    }
    Ok(())
}

fn verdict(records: &[CheckRecord]) -> CliResult<()> {
    match failures(records) {
        0 => Ok(()),
        failed => Err(CliError::ChecksFailed { failed, total: records.len() }),
    }
}

fn verify(a: &VerifyArgs) -> CliResult<()> {
    let model = match &a.model {
        Some(p) => load_model(p)?,
        None => default_model(),
    };
    let drift = parse_drift(&a.drift)?;
    if a.samples < 2 {
        return Err(CliError::invalid("--samples", "need at least two samples"));
    }
    let checks: Vec<GaussianCheck> = if a.checks.is_empty() { GaussianCheck::ALL.to_vec() } else { a.checks.clone() };
    let settings = GaussianSettings::new(a.seed, a.samples);
    let mut timings = Timings::default();
    let mut records = Vec::new();
    let mut per_check = Vec::new();
    for &c in &checks {
        let recs = timings.time(c.name(), || run_gaussian_check(&model, &drift, c, &settings))?;
        per_check.push(Obj::new().with("check", c.name()).with("records", checks_json(&recs)).build());
        records.extend(recs.into_iter().map(|r| (c.name().to_string(), r)));
    }
    let flat: Vec<CheckRecord> = records.iter().map(|r| r.1.clone()).collect();
    let config = Obj::new()
        .with("model_file", opt_path(a.model.as_ref()))
        .with("model", model_json(&model))
        .with("drift", drift_json(&drift))
        .with("checks", Value::Array(checks.iter().map(|c| Value::String(c.name().into())).collect()))
        .with("seed", a.seed)
        .with("samples", a.samples);
    let report = Obj::new()
        .with("command", "gaussian verify")
        .with("version", VERSION)
        .with("config", config)
        .with("checks", checks_json(&flat))
        .with("pass", failures(&flat) == 0)
        .build();
    emit(&report, a.out.as_deref())?;
    with_csv(a.out.as_deref(), &records)?;
    timings.emit(a.out.as_deref())?;
    verdict(&flat)
}

fn solution_body(sol: &BridgeSolution, n1: usize) -> Obj {
    let rows = |v: &[f64]| Value::Array(v.chunks(n1.max(1)).map(nums).collect());
    Obj::new()
        .with("entropy", num(sol.entropy))
        .with("sweeps", sol.sweeps)
        .with("marginal_error", num(sol.marginal_error()))
        .with("coupling", rows(&sol.coupling))
        .with("reference", rows(&sol.reference))
        .with("f", nums(&sol.f))
        .with("g", nums(&sol.g))
}

fn bridge(a: &BridgeArgs) -> CliResult<()> {
    if a.tol.is_nan() || a.tol <= 0.0 {
        return Err(CliError::invalid("--tol", "must be positive"));
    }
    let m = load_marginals(&a.q1, a.q0.as_deref())?;
    let opts = BridgeOptions { tol: a.tol, max_sweeps: a.max_sweeps };
    let mut timings = Timings::default();
    let sol =
        timings.time("ipf", || solve_schrodinger_bridge(&m, &opts)).map_err(|e| CliError::core(a.q1.display(), e))?;
    let mut records = bridge_solution_records("", &sol, a.tol);
    let model = match &a.model {
        Some(p) => load_model(p)?,
        None => GaussianPathModel::unit_horizon(200, m.dim(), IncrementModel::Gaussian)
            .map_err(|e| CliError::invalid("--model", e))?,
    };
    let terminal = match a.terminal_step {
        TerminalArg::Exact => TerminalStep::Exact,
        TerminalArg::Euler => TerminalStep::Euler,
    };
    let mut simulation = Value::Null;
    if a.verify {
        let r = timings
            .time("verify", || mikami_value_check(&model, &m, &sol, terminal, a.seed, a.samples))
            .map_err(|e| CliError::core("--verify", e))?;
        simulation = Obj::new()
            .with("control_cost", report::estimate(&r.control_cost))
            .with("terminal_tv", num(r.terminal_tv))
            .with("clipping_rate", num(r.clipping_rate))
            .build();
        records.extend(bridge_verify_records("", &r));
    }
    let config = Obj::new()
        .with("q1", path_value(&a.q1))
        .with("q0", opt_path(a.q0.as_ref()))
        .with("cell", num(m.cell))
        .with("tol", num(a.tol))
        .with("max_sweeps", a.max_sweeps)
        .with("verify", a.verify)
        .with("model", model_json(&model))
        .with("terminal_step", if terminal == TerminalStep::Exact { "exact" } else { "euler" })
        .with("seed", a.seed)
        .with("samples", a.samples);
    let mut report = Obj::new().with("command", "bridge").with("version", VERSION).with("config", config);
    for (k, v) in solution_body(&sol, m.q1.len()).build().as_object().expect("object").iter() {
        report.set(k, v.clone());
    }
    report.set("simulation", simulation);
    report.set("checks", checks_json(&records));
    report.set("pass", failures(&records) == 0);
    emit(&report.build(), a.out.as_deref())?;
    let rows: Vec<(String, CheckRecord)> = records.iter().map(|r| ("bridge".to_string(), r.clone())).collect();
    with_csv(a.out.as_deref(), &rows)?;
    timings.emit(a.out.as_deref())?;
    verdict(&records)
}

fn run_suite(a: &SuiteArgs) -> CliResult<()> {
    if a.samples < 2 {
        return Err(CliError::invalid("--samples", "need at least two samples"));
    }
    let cfg = SuiteConfig { seed: a.seed, samples: a.samples };
    let ids: Vec<u8> = if a.criteria.is_empty() { (1..=11).collect() } else { a.criteria.clone() };
    let results = suite::run_suite(&cfg, &ids)?;
    emit(&suite::suite_report(&cfg, &results), a.out.as_deref())?;
    let rows: Vec<(String, CheckRecord)> = results
        .iter()
        .flat_map(|c| c.records.iter().map(move |r| (format!("criterion {}", c.id), r.clone())))
        .collect();
    with_csv(a.out.as_deref(), &rows)?;
    suite::suite_timings(&results).emit(a.out.as_deref())?;
    let flat: Vec<CheckRecord> = rows.into_iter().map(|r| r.1).collect();
    verdict(&flat)
}
