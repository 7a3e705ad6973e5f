//! Classic and causal Monge–Kantorovich problems on finite filtered spaces.
//!
//! The LP has one variable per coupling entry with positive first-marginal
//! mass and finite cost; its constraints are the two marginals plus, in the
//! causal case, the chain equalities of [`causality_constraints`].

mod entropic;
mod monge;
pub mod simplex;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use entropic::{solve_causal_entropic, EntropicOptions};
pub use monge::{monge_bruteforce, solve_causal_monge_bruteforce, MongeResult, MONGE_MAX_PATHS};

use crate::causality::{causality_constraints, CausalityConstraintSet};
use crate::error::{invalid, Result};
use crate::path_space::{Coupling, PathMeasure};
use crate::scalar::Scalar;
use simplex::{LinearProgram, LpStatus, SimplexOptions};

/// Cost entries `c(ω, σ)`, row-major; `+∞` forbids a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(invalid(format!("cost has {} entries, expected {rows}x{cols}", entries.len())));
        }
        if entries.iter().any(|c| c.is_nan()) {
            return Err(invalid("cost contains NaN"));
        }
        if entries.iter().any(|&c| c == f64::NEG_INFINITY) {
            return Err(invalid("cost contains -inf"));
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let entries = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect();
        Self::new(rows, cols, entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|c| c.is_finite())
    }

    pub fn max_abs_finite(&self) -> f64 {
        self.entries.iter().filter(|c| c.is_finite()).fold(0.0, |m, c| f64::max(m, c.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    /// Guard status; bounded marginal polytopes never trigger it.
    Unbounded,
    NonConvergence,
}

/// Potentials for the row and column marginals and multipliers for the
/// causality equalities, in the order of the constraint set.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate<S> {
    pub row_potentials: Vec<S>,
    pub col_potentials: Vec<S>,
    pub multipliers: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct TransportSolution<S> {
    pub status: SolveStatus,
    pub value: S,
    pub plan: Option<Coupling<S>>,
    pub dual: Option<DualCertificate<S>>,
    /// Primal minus dual objective.
    pub gap: f64,
    pub iterations: usize,
    pub marginal_residual: f64,
    pub constraint_residual: f64,
}

impl<S: Scalar> TransportSolution<S> {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

fn check_instance<S: Scalar>(eta: &PathMeasure<S>, nu: &PathMeasure<S>, cost: &CostMatrix) -> Result<()> {
    if cost.rows() != eta.len() || cost.cols() != nu.len() {
        return Err(invalid(format!(
            "cost is {}x{}, measures have {} and {} paths",
            cost.rows(),
            cost.cols(),
            eta.len(),
            nu.len()
        )));
    }
    Ok(())
}

/// Largest violation of `c − u_ω − v_σ − Σ λ_e a_e(ω,σ) ≥ 0` over finite-cost pairs.
pub fn dual_violation<S: Scalar>(
    cost: &CostMatrix,
    constraints: Option<&CausalityConstraintSet<S>>,
    dual: &DualCertificate<S>,
) -> f64 {
    let (n, m) = (cost.rows(), cost.cols());
    let mut slack: Vec<S> = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            slack.push(
                S::from_f64(if cost.get(i, j).is_finite() { cost.get(i, j) } else { 0.0 })
                    - dual.row_potentials[i].clone()
                    - dual.col_potentials[j].clone(),
            );
        }
    }
    if let Some(set) = constraints {
        for (e, lam) in set.equalities.iter().zip(&dual.multipliers) {
            for (i, j, a) in e.terms() {
                slack[i * m + j] = slack[i * m + j].clone() - lam.clone() * a;
            }
        }
    }
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..m {
            if cost.get(i, j).is_finite() {
                worst = worst.max(-slack[i * m + j].to_f64());
            }
        }
    }
    worst
}

/// Dual objective `Σ η u + Σ ν v` (the causality right-hand sides are zero).
pub fn dual_objective<S: Scalar>(eta: &PathMeasure<S>, nu: &PathMeasure<S>, dual: &DualCertificate<S>) -> S {
    let a = eta.weights().iter().zip(&dual.row_potentials).fold(S::zero(), |acc, (w, u)| acc + w.clone() * u.clone());
    nu.weights().iter().zip(&dual.col_potentials).fold(a, |acc, (w, v)| acc + w.clone() * v.clone())
}

/// Largest absolute marginal error of a plan.
pub fn marginal_residual<S: Scalar>(plan: &Coupling<S>, eta: &PathMeasure<S>, nu: &PathMeasure<S>) -> f64 {
    let a = plan.first_marginal();
    let b = plan.second_marginal();
    let ra = a.weights().iter().zip(eta.weights()).map(|(x, y)| (x.clone() - y.clone()).to_f64().abs());
    let rb = b.weights().iter().zip(nu.weights()).map(|(x, y)| (x.clone() - y.clone()).to_f64().abs());
    ra.chain(rb).fold(0.0, f64::max)
}

fn solve_lp<S: Scalar>(
    eta: &PathMeasure<S>,
    nu: &PathMeasure<S>,
    cost: &CostMatrix,
    constraints: Option<&CausalityConstraintSet<S>>,
    opts: &SimplexOptions,
) -> Result<TransportSolution<S>> {
    check_instance(eta, nu, cost)?;
    let (n, m) = (eta.len(), nu.len());
    let mut var_of = vec![usize::MAX; n * m];
    let mut vars = Vec::new();
    let mut lp_cost = Vec::new();
    for i in 0..n {
        if !eta.is_positive(i) {
            continue;
        }
        for j in 0..m {
            let c = cost.get(i, j);
            if c.is_finite() {
                var_of[i * m + j] = vars.len();
                vars.push((i, j));
                lp_cost.push(S::from_f64(c));
            }
        }
    }
    let positive_rows: Vec<usize> = (0..n).filter(|&i| eta.is_positive(i)).collect();
    let mut lp = LinearProgram::new(lp_cost);
    for &i in &positive_rows {
        let terms =
            (0..m).filter(|&j| var_of[i * m + j] != usize::MAX).map(|j| (var_of[i * m + j], S::one())).collect();
        lp.add_row(terms, eta.weight(i).clone());
    }
    for j in 0..m {
        let terms =
            (0..n).filter(|&i| var_of[i * m + j] != usize::MAX).map(|i| (var_of[i * m + j], S::one())).collect();
        lp.add_row(terms, nu.weight(j).clone());
    }
    if let Some(set) = constraints {
        for e in &set.equalities {
            let terms = e
                .terms()
                .filter(|(i, j, _)| var_of[i * m + j] != usize::MAX)
                .map(|(i, j, a)| (var_of[i * m + j], a))
                .collect();
            lp.add_row(terms, S::zero());
        }
    }
    let sol = lp.solve(opts);
    let status = match sol.status {
        LpStatus::Optimal => SolveStatus::Optimal,
        LpStatus::Infeasible => SolveStatus::Infeasible,
        LpStatus::Unbounded => SolveStatus::Unbounded,
        LpStatus::IterationLimit => SolveStatus::NonConvergence,
    };
    if status != SolveStatus::Optimal {
        return Ok(TransportSolution {
            status,
            value: S::zero(),
            plan: None,
            dual: None,
            gap: f64::NAN,
            iterations: sol.iterations,
            marginal_residual: f64::NAN,
            constraint_residual: f64::NAN,
        });
    }
    let mut weights = vec![S::zero(); n * m];
    for (k, &(i, j)) in vars.iter().enumerate() {
        weights[i * m + j] = sol.x[k].clone();
    }
    let plan = Coupling::from_parts_unchecked(eta.space().clone(), nu.space().clone(), weights);

    let mut row_potentials = vec![S::zero(); n];
    for (r, &i) in positive_rows.iter().enumerate() {
        row_potentials[i] = sol.y[r].clone();
    }
    let off = positive_rows.len();
    let col_potentials: Vec<S> = (0..m).map(|j| sol.y[off + j].clone()).collect();
    let multipliers: Vec<S> = match constraints {
        Some(set) => (0..set.len()).map(|e| sol.y[off + m + e].clone()).collect(),
        None => Vec::new(),
    };
    // null rows carry no constraint: choose the largest feasible potential
    for i in 0..n {
        if eta.is_positive(i) {
            continue;
        }
        let best = (0..m)
            .filter(|&j| cost.get(i, j).is_finite())
            .map(|j| S::from_f64(cost.get(i, j)) - col_potentials[j].clone())
            .fold(None::<S>, |acc, v| match acc {
                Some(a) if a <= v => Some(a),
                _ => Some(v),
            });
        row_potentials[i] = best.unwrap_or_else(S::zero);
    }
    let dual = DualCertificate { row_potentials, col_potentials, multipliers };
    let gap = (sol.value.clone() - dual_objective(eta, nu, &dual)).to_f64();
    let constraint_residual = constraints.map_or(0.0, |set| set.max_residual(&plan));
    Ok(TransportSolution {
        status,
        value: sol.value,
        marginal_residual: marginal_residual(&plan, eta, nu),
        plan: Some(plan),
        dual: Some(dual),
        gap,
        iterations: sol.iterations,
        constraint_residual,
    })
}

/// Optimal transport over all couplings of `(η, ν)`.
pub fn solve_classic_mk<S: Scalar>(
    eta: &PathMeasure<S>,
    nu: &PathMeasure<S>,
    cost: &CostMatrix,
    opts: &SimplexOptions,
) -> Result<TransportSolution<S>> {
    solve_lp(eta, nu, cost, None, opts)
}

/// Optimal transport over causal couplings of `(η, ν)`.
pub fn solve_causal_mk<S: Scalar>(
    eta: &PathMeasure<S>,
    nu: &PathMeasure<S>,
    cost: &CostMatrix,
    opts: &SimplexOptions,
) -> Result<TransportSolution<S>> {
    let set = causality_constraints(eta.space(), nu.space(), eta)?;
    solve_lp(eta, nu, cost, Some(&set), opts)
}

fn value_or_err(sol: TransportSolution<f64>) -> Result<f64> {
    match sol.status {
        SolveStatus::Optimal => Ok(sol.value),
        SolveStatus::Infeasible => Ok(f64::INFINITY),
        _ => Err(crate::error::Error::NonConvergence { iterations: sol.iterations, residual: f64::NAN }),
    }
}

/// Causal value `S(ν|η)`; `+∞` when infeasible.
pub fn value_s(eta: &PathMeasure<f64>, nu: &PathMeasure<f64>, cost: &CostMatrix) -> Result<f64> {
    value_or_err(solve_causal_mk(eta, nu, cost, &SimplexOptions::default())?)
}

/// Classic value `T(ν|η)`; `+∞` when infeasible.
pub fn value_t(eta: &PathMeasure<f64>, nu: &PathMeasure<f64>, cost: &CostMatrix) -> Result<f64> {
    value_or_err(solve_classic_mk(eta, nu, cost, &SimplexOptions::default())?)
}
