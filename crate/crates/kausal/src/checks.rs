//! Verification checks for the Gaussian path lab.
//!
//! Tolerances follow one policy. Drifts that do not depend on the path have
//! exact discrete oracles and are compared within `3·SE`. The linear drift is
//! compared with its continuous-time closed form inside a 2% band, which
//! absorbs the `O(dt)` Euler bias. Drifts without a closed form are checked
//! through paired identities and one-sided inequalities only.

use std::fmt;
use std::str::FromStr;

use kausal_core::bridge::{BridgeSolution, MikamiReport};
use kausal_core::gaussian_lab::{
    clark_ocone_residual, density_mean, drift_from_density, dual_certificate, follmer_energy, hybrid_coupling_cost,
    optimal_plan_cost, orthogonality_residual, relative_entropy, strong_solution_gap, talagrand_log_sobolev,
    CouplingPlan, DriftSpec, GaussianPathModel, IncrementModel, TalagrandOptions, CLARK_OCONE_MAX, KS_LEVEL,
};
use kausal_core::stats::{joint_se, MCEstimate};

use crate::error::{CliError, CliResult};
use crate::report::{CheckRecord, Rule};

/// Standard errors allowed by every Monte Carlo comparison.
pub const K_SE: f64 = 3.0;
/// Relative band for the linear drift against its continuous-time oracle.
pub const OU_BAND: f64 = 0.02;
/// Bound on the exact (enumerated or pathwise) residuals.
pub const EXACT_TOL: f64 = 1e-12;
/// Bound on pointwise drift recovery for path-independent drifts.
pub const RECOVERY_TOL: f64 = 1e-6;
/// Relative L² bound on drift recovery otherwise.
pub const RECOVERY_REL: f64 = 0.05;

/// Parses `kind=constant a=1`, `kind=ou lambda=1`, `kind=tanh scale=1`, `kind=zero`.
pub fn parse_drift(tokens: &[String]) -> CliResult<DriftSpec> {
    let bad = |m: String| CliError::invalid("--drift", m);
    let mut kind = None;
    let mut params = Vec::new();
    for t in tokens.iter().flat_map(|t| t.split_whitespace()) {
        let (k, v) = t.split_once('=').ok_or_else(|| bad(format!("expected key=value, got {t:?}")))?;
        if k == "kind" {
            kind = Some(v.to_string());
        } else {
            let x: f64 = v.parse().map_err(|_| bad(format!("{k}={v} is not a number")))?;
            if !x.is_finite() {
                return Err(bad(format!("{k} must be finite")));
            }
            params.push((k.to_string(), x));
        }
    }
    let kind = kind.ok_or_else(|| bad("missing kind=...".into()))?;
    let (name, default) = match kind.as_str() {
        "zero" => (None, 0.0),
        "constant" => (Some("a"), 1.0),
        "ou" => (Some("lambda"), 1.0),
        "tanh" => (Some("scale"), 1.0),
        other => return Err(bad(format!("unknown drift kind {other:?}"))),
    };
    let mut value = default;
    for (k, x) in params {
        if Some(k.as_str()) != name {
            return Err(bad(format!("drift {kind} takes no parameter {k}")));
        }
        value = x;
    }
    Ok(match kind.as_str() {
        "zero" => DriftSpec::Zero,
        "constant" => DriftSpec::Constant { a: value },
        "ou" => DriftSpec::Ou { lambda: value },
        _ => DriftSpec::Tanh { scale: value },
    })
}

pub fn drift_label(drift: &DriftSpec) -> String {
    match *drift {
        DriftSpec::Zero => "zero".into(),
        DriftSpec::Constant { a } => format!("constant a={a}"),
        DriftSpec::Ou { lambda } => format!("ou lambda={lambda}"),
        DriftSpec::Tanh { scale } => format!("tanh scale={scale}"),
    }
}

/// Continuous-time `2H` on the unit horizon, when known.
pub fn two_h_closed_form(drift: &DriftSpec, dim: usize) -> Option<f64> {
    let d = dim as f64;
    match *drift {
        DriftSpec::Zero => Some(0.0),
        DriftSpec::Constant { a } => Some(a * a * d),
        DriftSpec::Ou { lambda } => {
            if lambda == 0.0 {
                Some(0.0)
            } else {
                let l = lambda;
                Some(d * (l / 2.0) * (1.0 - (1.0 - (-2.0 * l).exp()) / (2.0 * l)))
            }
        }
        DriftSpec::Tanh { .. } => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaussianCheck {
    Girsanov,
    Entropy,
    Follmer,
    Optimal,
    Hybrid,
    Orthogonality,
    Strong,
    Dual,
    Talagrand,
    ClarkOcone,
    DriftRecovery,
}

impl GaussianCheck {
    pub const ALL: [GaussianCheck; 11] = [
        GaussianCheck::Girsanov,
        GaussianCheck::Entropy,
        GaussianCheck::Follmer,
        GaussianCheck::Optimal,
        GaussianCheck::Hybrid,
        GaussianCheck::Orthogonality,
        GaussianCheck::Strong,
        GaussianCheck::Dual,
        GaussianCheck::Talagrand,
        GaussianCheck::ClarkOcone,
        GaussianCheck::DriftRecovery,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GaussianCheck::Girsanov => "girsanov",
            GaussianCheck::Entropy => "entropy",
            GaussianCheck::Follmer => "follmer",
            GaussianCheck::Optimal => "optimal",
            GaussianCheck::Hybrid => "hybrid",
            GaussianCheck::Orthogonality => "orthogonality",
            GaussianCheck::Strong => "strong",
            GaussianCheck::Dual => "dual",
            GaussianCheck::Talagrand => "talagrand",
            GaussianCheck::ClarkOcone => "clark-ocone",
            GaussianCheck::DriftRecovery => "drift-recovery",
        }
    }
}

impl fmt::Display for GaussianCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GaussianCheck {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown check {s:?}; expected one of {}", Self::ALL.map(|c| c.name()).join(",")))
    }
}

#[derive(Debug, Clone)]
pub struct GaussianSettings {
    pub seed: u64,
    pub samples: usize,
    /// Switch steps for the hybrid plans; `None` uses quarters of `N`.
    pub hybrid_levels: Option<Vec<usize>>,
    pub talagrand: TalagrandOptions,
    /// Steps of the Rademacher walk for Clark–Ocone.
    pub clark_ocone_steps: usize,
}

impl GaussianSettings {
    pub fn new(seed: u64, samples: usize) -> Self {
        Self { seed, samples, hybrid_levels: None, talagrand: talagrand_options(samples), clark_ocone_steps: 10 }
    }
}

/// Clouds of 64 points, one batch per 3125 samples (32 at `n = 10^5`).
pub fn talagrand_options(samples: usize) -> TalagrandOptions {
    TalagrandOptions { samples, cloud: 64, batches: (samples / 3125).clamp(2, 32), fisher_samples: samples.min(10_000) }
}

fn core<T>(check: GaussianCheck, r: kausal_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::core(format!("check {check}"), e))
}

/// Compares an estimate of `2H` (or of a quantity equal to it) with the oracle.
fn against_oracle(name: String, est: &MCEstimate, drift: &DriftSpec, dim: usize) -> Option<CheckRecord> {
    let oracle = two_h_closed_form(drift, dim)?;
    Some(if drift.is_deterministic() {
        CheckRecord::within_se(name, est.value, est.standard_error, oracle, K_SE, 0.0)
    } else {
        CheckRecord::relative(name, est.value, est.standard_error, oracle, OU_BAND)
    })
}

fn paired_zero(name: String, diff: &MCEstimate) -> CheckRecord {
    CheckRecord::within_se(name, diff.value, diff.standard_error, 0.0, K_SE, 0.0)
}

pub fn hybrid_levels(steps: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=4).map(|q| q * steps / 4).collect();
    v.dedup();
    v
}

/// Runs one check and returns its records, prefixed with the check name.
pub fn run_gaussian_check(
    model: &GaussianPathModel,
    drift: &DriftSpec,
    check: GaussianCheck,
    s: &GaussianSettings,
) -> CliResult<Vec<CheckRecord>> {
    let (seed, n, d) = (s.seed, s.samples, model.dim());
    let p = |suffix: &str| format!("{check}.{suffix}");
    let mut out = Vec::new();
    match check {
        GaussianCheck::Girsanov => {
            let e = core(check, density_mean(model, drift, seed, n))?;
            out.push(CheckRecord::within_se(p("density_mean"), e.value, e.standard_error, 1.0, K_SE, 0.0));
        }
        GaussianCheck::Entropy => {
            let e = core(check, relative_entropy(model, drift, seed, n))?;
            let two_h = e.density.scaled(2.0);
            out.extend(against_oracle(p("two_h"), &two_h, drift, d));
            out.push(paired_zero(p("estimators_agree"), &e.difference));
        }
        GaussianCheck::Follmer => {
            let f = core(check, follmer_energy(model, drift, seed, n))?;
            out.extend(against_oracle(p("energy"), &f.energy, drift, d));
            out.push(paired_zero(p("energy_equals_two_h"), &f.difference));
        }
        GaussianCheck::Optimal => {
            let r = core(check, optimal_plan_cost(model, drift, seed, n))?;
            out.extend(against_oracle(p("cost"), &r.cost, drift, d));
            if let Some(pv) = r.ks_p_value {
                out.push(CheckRecord::new(p("shift_is_gaussian_p_value"), pv, Rule::AtLeast, KS_LEVEL, 0.0));
            }
            out.push(CheckRecord::new(p("reconstruction_error"), r.max_reconstruction_error, Rule::AtMost, 0.0, 1e-9));
            if two_h_closed_form(drift, d).is_none() {
                let e = core(check, relative_entropy(model, drift, seed, n))?;
                let diff = r.cost.value - 2.0 * e.density.value;
                out.push(paired_zero(
                    p("cost_equals_two_h"),
                    &MCEstimate { value: diff, standard_error: joint_se(&r.cost, &e.density.scaled(2.0)), ..r.cost },
                ));
            }
        }
        GaussianCheck::Hybrid => {
            let levels = s.hybrid_levels.clone().unwrap_or_else(|| hybrid_levels(model.steps()));
            let entropy = core(check, relative_entropy(model, drift, seed, n))?.density.scaled(2.0);
            let mut costs = Vec::with_capacity(levels.len());
            for &m in &levels {
                let c = core(check, hybrid_coupling_cost(model, drift, m, seed, n))?;
                let fresh = 2.0 * (d * (model.steps() - m)) as f64;
                let name = p(&format!("cost_m{m}"));
                out.push(match (two_h_closed_form(drift, d), drift.is_deterministic()) {
                    (Some(o), true) => CheckRecord::within_se(name, c.value, c.standard_error, o + fresh, K_SE, 0.0),
                    (Some(o), false) => {
                        CheckRecord::within_se(name, c.value, c.standard_error, o + fresh, K_SE, OU_BAND * o.abs())
                    }
                    (None, _) => {
                        CheckRecord::within_se(name, c.value, joint_se(&c, &entropy), entropy.value + fresh, K_SE, 0.0)
                    }
                });
                costs.push((m, c));
            }
            let mut sorted = costs.clone();
            sorted.sort_by_key(|x| x.0);
            let decreasing = sorted.windows(2).all(|w| w[0].0 == w[1].0 || w[1].1.value < w[0].1.value);
            out.push(CheckRecord::flag(p("decreasing_in_m"), decreasing));
        }
        GaussianCheck::Orthogonality => {
            for (label, plan) in [("optimal", CouplingPlan::Optimal), ("product", CouplingPlan::Product)] {
                let res = core(check, orthogonality_residual(model, drift, plan, seed, n))?;
                // worst step relative to its own noise level
                let worst = res
                    .iter()
                    .map(|r| (r.residual - K_SE * r.standard_error, r))
                    .max_by(|a, b| a.0.total_cmp(&b.0))
                    .map(|x| *x.1);
                if let Some(w) = worst {
                    out.push(
                        CheckRecord::within_se(p(label), w.residual, w.standard_error, 0.0, K_SE, 0.0)
                            .with_note(format!("worst step {} component {}", w.step, w.component)),
                    );
                }
            }
        }
        GaussianCheck::Strong => {
            let g = core(check, strong_solution_gap(model, drift, seed, n))?;
            out.push(paired_zero(p("gap"), &g.gap));
            out.push(CheckRecord::at_least_se(p("gap_direction"), g.gap.value, g.gap.standard_error, 0.0, K_SE));
        }
        GaussianCheck::Dual => {
            let r = core(check, dual_certificate(model, drift, seed, n))?;
            out.extend(against_oracle(p("certificate"), &r.certificate, drift, d));
            out.push(paired_zero(p("attainment"), &r.attainment));
            out.push(CheckRecord::at_least_se(p("slack"), r.slack.value, r.slack.standard_error, 0.0, K_SE));
        }
        GaussianCheck::Talagrand => {
            let opts = TalagrandOptions { samples: n, ..s.talagrand };
            let r = core(check, talagrand_log_sobolev(model, drift, seed, &opts))?;
            let (ts, tse) = r.talagrand_slack();
            let (ls, lse) = r.log_sobolev_slack();
            out.push(CheckRecord::at_least_se(p("two_h_minus_d2_lower"), ts, tse, 0.0, K_SE));
            out.push(CheckRecord::at_least_se(p("fisher_minus_two_h"), ls, lse, 0.0, K_SE));
            out.push(CheckRecord::at_least_se(
                p("d2_upper_minus_d2_lower"),
                r.d2_upper.value - r.d2_lower.value,
                joint_se(&r.d2_upper, &r.d2_lower),
                0.0,
                K_SE,
            ));
            if drift.is_deterministic() {
                out.push(CheckRecord::within_se(p("d2_lower_equals_two_h"), -ts, tse, 0.0, K_SE, 0.0));
                out.push(CheckRecord::within_se(p("fisher_equals_two_h"), ls, lse, 0.0, K_SE, 0.0));
            }
        }
        GaussianCheck::ClarkOcone => {
            let walk = clark_ocone_model(model, s.clark_ocone_steps)?;
            for (name, f) in clark_ocone_functionals() {
                let r = core(check, clark_ocone_residual(&walk, &f))?;
                out.push(CheckRecord::new(p(name), r, Rule::AtMost, 0.0, EXACT_TOL).with_note(format!(
                    "N={} d={}",
                    walk.steps(),
                    walk.dim()
                )));
            }
        }
        GaussianCheck::DriftRecovery => {
            let r = core(check, drift_from_density(model, drift, seed, n))?;
            if drift.is_deterministic() {
                out.push(CheckRecord::new(
                    p("max_pointwise_error"),
                    r.max_pointwise_error,
                    Rule::AtMost,
                    0.0,
                    RECOVERY_TOL,
                ));
                out.push(CheckRecord::new(p("rms_error"), r.rms_error, Rule::AtMost, 0.0, RECOVERY_TOL));
            } else {
                out.push(CheckRecord::new(
                    p("relative_l2_error"),
                    r.relative_l2_error,
                    Rule::AtMost,
                    0.0,
                    RECOVERY_REL,
                ));
            }
        }
    }
    Ok(out)
}

/// The Rademacher walk used by Clark–Ocone: the given model when it is one,
/// otherwise a unit-horizon walk of `steps` steps in the model's dimension.
pub fn clark_ocone_model(model: &GaussianPathModel, steps: usize) -> CliResult<GaussianPathModel> {
    let walk = if model.increments() == IncrementModel::Rademacher {
        *model
    } else {
        GaussianPathModel::unit_horizon(steps, model.dim(), IncrementModel::Rademacher)
            .map_err(|e| CliError::invalid("clark-ocone", e))?
    };
    if walk.len() > CLARK_OCONE_MAX {
        return Err(CliError::invalid(
            "clark-ocone",
            format!("N·d = {} exceeds the enumeration limit {CLARK_OCONE_MAX}", walk.len()),
        ));
    }
    Ok(walk)
}

pub type Functional = Box<dyn Fn(&[f64]) -> f64 + Sync>;

/// Linear, quadratic and exponential functionals of the terminal value.
pub fn clark_ocone_functionals() -> Vec<(&'static str, Functional)> {
    vec![
        ("linear", Box::new(|w: &[f64]| w.iter().sum())),
        (
            "square",
            Box::new(|w: &[f64]| {
                let s: f64 = w.iter().sum();
                s * s
            }),
        ),
        ("exp", Box::new(|w: &[f64]| w.iter().sum::<f64>().exp())),
    ]
}

/// Largest terminal total variation accepted by the bridge check.
pub const BRIDGE_TV: f64 = 5e-2;
/// Largest fraction of unresolved terminal cells.
pub const BRIDGE_CLIPPING: f64 = 1e-3;
/// Discretization allowance on the control cost, relative to the entropy.
pub const BRIDGE_BAND: f64 = 0.02;

pub fn bridge_solution_records(prefix: &str, sol: &BridgeSolution, tol: f64) -> Vec<CheckRecord> {
    vec![
        CheckRecord::new(format!("{prefix}ipf_marginal_error"), sol.marginal_error(), Rule::AtMost, 0.0, tol),
        CheckRecord::new(format!("{prefix}entropy_nonnegative"), sol.entropy, Rule::AtLeast, 0.0, 0.0),
    ]
}

pub fn bridge_verify_records(prefix: &str, r: &MikamiReport) -> Vec<CheckRecord> {
    let c = &r.control_cost;
    vec![
        CheckRecord::within_se(
            format!("{prefix}control_cost_equals_entropy"),
            c.value,
            c.standard_error,
            r.entropy,
            K_SE,
            BRIDGE_BAND * r.entropy.abs(),
        ),
        CheckRecord::new(format!("{prefix}terminal_tv"), r.terminal_tv, Rule::AtMost, 0.0, BRIDGE_TV),
        CheckRecord::new(format!("{prefix}clipping_rate"), r.clipping_rate, Rule::AtMost, 0.0, BRIDGE_CLIPPING),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn drift_tokens() {
        assert_eq!(parse_drift(&toks("kind=constant a=2")).unwrap(), DriftSpec::Constant { a: 2.0 });
        assert_eq!(parse_drift(&toks("kind=ou")).unwrap(), DriftSpec::Ou { lambda: 1.0 });
        assert_eq!(parse_drift(&["kind=tanh scale=0.5".to_string()]).unwrap(), DriftSpec::Tanh { scale: 0.5 });
        assert!(parse_drift(&toks("kind=ou a=1")).is_err());
        assert!(parse_drift(&toks("a=1")).is_err());
        assert!(parse_drift(&toks("kind=cubic")).is_err());
        assert!(parse_drift(&toks("kind=constant a=x")).is_err());
    }

    #[test]
    fn ou_closed_form_by_quadrature() {
        // 2H = λ² ∫₀¹ E X_t² dt, with E X_t² = (1 − e^{−2λt})/(2λ) for dX = dW − λX dt
        let l: f64 = 1.0;
        let n = 200_000;
        let h = 1.0 / n as f64;
        let var = |t: f64| (1.0 - (-2.0 * l * t).exp()) / (2.0 * l);
        let integral: f64 = (0..n).map(|i| var((i as f64 + 0.5) * h)).sum::<f64>() * h;
        let oracle = l * l * integral;
        let closed = two_h_closed_form(&DriftSpec::Ou { lambda: l }, 1).unwrap();
        assert!((closed - oracle).abs() < 1e-9, "{closed} {oracle}");
        assert!((closed - 0.28383).abs() < 5e-6);
    }

    #[test]
    fn check_names_round_trip() {
        for c in GaussianCheck::ALL {
            assert_eq!(c.name().parse::<GaussianCheck>().unwrap(), c);
        }
        assert!("speed".parse::<GaussianCheck>().is_err());
    }

    #[test]
    fn constant_drift_follmer_passes() {
        let model = GaussianPathModel::unit_horizon(20, 1, IncrementModel::Gaussian).unwrap();
        let recs = run_gaussian_check(
            &model,
            &DriftSpec::Constant { a: 1.0 },
            GaussianCheck::Follmer,
            &GaussianSettings::new(1, 2000),
        )
        .unwrap();
        assert!(recs.iter().all(|r| r.pass), "{recs:?}");
        assert!((recs[0].estimate - 1.0).abs() < 1e-9);
    }

    #[test]
    fn clark_ocone_functionals_are_exact() {
        let model = GaussianPathModel::unit_horizon(6, 1, IncrementModel::Gaussian).unwrap();
        let recs = run_gaussian_check(
            &model,
            &DriftSpec::Zero,
            GaussianCheck::ClarkOcone,
            &GaussianSettings { clark_ocone_steps: 6, ..GaussianSettings::new(0, 1) },
        )
        .unwrap();
        assert_eq!(recs.len(), 3);
        assert!(recs.iter().all(|r| r.pass));
    }
}
