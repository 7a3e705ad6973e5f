//! Entropic causal transport by cyclic Bregman (KL) projections.
//!
//! The iterate is kept in log form,
//! `ln γ = ln(η⊗ν) + (f_ω + g_σ + Σ_e λ_e a_e − c)/ε`,
//! and each projection moves one potential. Every constraint is affine, so
//! plain cyclic projections converge to the KL projection of the Gibbs kernel
//! and no Dykstra correction terms are needed. Small `ε` is reached through a
//! geometric schedule that keeps the potentials between stages.
//!
//! Near-deterministic plans make the projections converge slowly, so each
//! stage finishes with damped Newton steps on the smooth dual.
//!
//! Causality can force entries of `η⊗ν` to vanish in every feasible plan.
//! Projections then only converge sublinearly, so the reference is first cut
//! down to the largest support any causal coupling reaches.

use alloc::vec;
use alloc::vec::Vec;

use super::simplex::SimplexOptions;
use super::{marginal_residual, solve_lp, CostMatrix, DualCertificate, SolveStatus, TransportSolution};
use crate::causality::{causality_constraints, CausalityConstraintSet, ChainEquality};
use crate::error::{invalid, Result};
use crate::path_space::{Coupling, PathMeasure};
use crate::stats::pivoted_cholesky_solve;

#[derive(Debug, Clone, Copy)]
pub struct EntropicOptions {
    /// Cap on full projection sweeps, summed over all stages.
    pub max_iters: usize,
    /// Stop when `KL(γ_{k+1} | γ_k)` over a sweep falls below this...
    pub kl_tol: f64,
    /// ...and every marginal and causality residual is below this.
    pub residual_tol: f64,
    /// Start the schedule at `max|c|` and divide by this factor per stage.
    pub schedule_factor: f64,
}

impl Default for EntropicOptions {
    fn default() -> Self {
        Self { max_iters: 50_000, kl_tol: 1e-12, residual_tol: 1e-10, schedule_factor: 4.0 }
    }
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(values.map(|v| libm::exp(v - m)).sum::<f64>())
}

struct State<'a> {
    n: usize,
    m: usize,
    eta: &'a [f64],
    nu: &'a [f64],
    cost: &'a CostMatrix,
    chains: &'a [ChainEquality<f64>],
    log_ref: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    lambda: Vec<f64>,
    log_gamma: Vec<f64>,
    eps: f64,
}

impl State<'_> {
    fn rebuild(&mut self) {
        let m = self.m;
        let mut shift = vec![0.0; self.n * m];
        for (e, lam) in self.chains.iter().zip(&self.lambda) {
            for (i, j, a) in e.terms() {
                shift[i * m + j] += lam * a;
            }
        }
        for i in 0..self.n {
            for j in 0..m {
                let k = i * m + j;
                self.log_gamma[k] = if self.log_ref[k] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    self.log_ref[k] + (self.f[i] + self.g[j] + shift[k] - self.cost.get(i, j)) / self.eps
                };
            }
        }
    }

    fn sweep(&mut self) {
        let (n, m) = (self.n, self.m);
        for i in 0..n {
            if self.eta[i] <= 0.0 {
                continue;
            }
            let row = &mut self.log_gamma[i * m..(i + 1) * m];
            let d = libm::log(self.eta[i]) - logsumexp(row.iter().copied());
            row.iter_mut().for_each(|v| *v += d);
            self.f[i] += self.eps * d;
        }
        for j in 0..m {
            if self.nu[j] <= 0.0 {
                continue;
            }
            let lse = logsumexp((0..n).map(|i| self.log_gamma[i * m + j]));
            let d = libm::log(self.nu[j]) - lse;
            for i in 0..n {
                self.log_gamma[i * m + j] += d;
            }
            self.g[j] += self.eps * d;
        }
        for (k, e) in self.chains.iter().enumerate() {
            let (w, wp) = (e.omega, e.omega_prime);
            let l1 = logsumexp(e.set.iter().map(|&j| self.log_gamma[w * m + j]));
            let l2 = logsumexp(e.set.iter().map(|&j| self.log_gamma[wp * m + j]));
            if l1 == f64::NEG_INFINITY || l2 == f64::NEG_INFINITY {
                continue;
            }
            // both blocks move to the η-weighted geometric mean of their kernels
            let (p, q) = (e.coef_omega, e.coef_omega_prime);
            let tau = (l2 + libm::log(q) - l1 - libm::log(p)) / (p + q);
            for &j in &e.set {
                self.log_gamma[w * m + j] += tau * p;
                self.log_gamma[wp * m + j] -= tau * q;
            }
            self.lambda[k] += self.eps * tau;
        }
    }

    fn plan(&self) -> Vec<f64> {
        self.log_gamma.iter().map(|&v| libm::exp(v)).collect()
    }

    fn dual_vars(&self) -> Vec<f64> {
        self.f.iter().chain(&self.g).chain(&self.lambda).copied().collect()
    }

    fn set_dual_vars(&mut self, z: &[f64]) {
        let (n, m) = (self.n, self.m);
        self.f.copy_from_slice(&z[..n]);
        self.g.copy_from_slice(&z[n..n + m]);
        self.lambda.copy_from_slice(&z[n + m..]);
        self.rebuild();
    }

    /// Dual value `⟨η,f⟩ + ⟨ν,g⟩ − ε·Σγ` and its gradient, the residuals of
    /// every constraint, at the current potentials.
    fn dual(&self) -> (f64, Vec<f64>) {
        let (n, m) = (self.n, self.m);
        let plan = self.plan();
        let mut grad = vec![0.0; n + m + self.chains.len()];
        for i in 0..n {
            if self.eta[i] > 0.0 {
                grad[i] = self.eta[i] - plan[i * m..(i + 1) * m].iter().sum::<f64>();
            }
        }
        for j in 0..m {
            if self.nu[j] > 0.0 {
                grad[n + j] = self.nu[j] - (0..n).map(|i| plan[i * m + j]).sum::<f64>();
            }
        }
        for (k, e) in self.chains.iter().enumerate() {
            grad[n + m + k] = -e.terms().map(|(i, j, a)| a * plan[i * m + j]).sum::<f64>();
        }
        let value = self.eta.iter().zip(&self.f).map(|(a, b)| a * b).sum::<f64>()
            + self.nu.iter().zip(&self.g).map(|(a, b)| a * b).sum::<f64>()
            - self.eps * plan.iter().sum::<f64>();
        (value, grad)
    }

    /// Damped Newton ascent on the dual until every residual is below `tol`
    /// or no step makes progress. The Hessian is `−A diag(γ) Aᵀ / ε`; its
    /// null directions (the `f + c, g − c` gauge, redundant chains) are
    /// dropped by the pivoted factorization.
    fn newton(&mut self, tol: f64, max_steps: usize) {
        let (n, m) = (self.n, self.m);
        let dim = n + m + self.chains.len();
        let mut entry_chains: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n * m];
        for (k, e) in self.chains.iter().enumerate() {
            for (i, j, a) in e.terms() {
                entry_chains[i * m + j].push((n + m + k, a));
            }
        }
        let (mut value, mut grad) = self.dual();
        for _ in 0..max_steps {
            let res = grad.iter().fold(0.0, |acc: f64, g| acc.max(g.abs()));
            if res <= tol {
                return;
            }
            let plan = self.plan();
            let mut hess = vec![0.0; dim * dim];
            for i in 0..n {
                for j in 0..m {
                    let w = plan[i * m + j];
                    if w <= 0.0 {
                        continue;
                    }
                    let mut v: Vec<(usize, f64)> = vec![(i, 1.0), (n + j, 1.0)];
                    v.extend_from_slice(&entry_chains[i * m + j]);
                    for &(r, a) in &v {
                        for &(c, b) in &v {
                            hess[r * dim + c] += w * a * b;
                        }
                    }
                }
            }
            let rhs: Vec<f64> = grad.iter().map(|g| self.eps * g).collect();
            let step = pivoted_cholesky_solve(hess, rhs, dim, 1e-14).coef;
            let slope: f64 = grad.iter().zip(&step).map(|(g, d)| g * d).sum();
            let z = self.dual_vars();
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let trial: Vec<f64> = z.iter().zip(&step).map(|(a, d)| a + t * d).collect();
                self.set_dual_vars(&trial);
                let (v, g) = self.dual();
                let r = g.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()));
                if v.is_finite() && (v >= value + 1e-4 * t * slope || r <= (1.0 - 1e-4 * t) * res) {
                    value = v;
                    grad = g;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                self.set_dual_vars(&z);
                return;
            }
        }
    }
}

/// Sweeps between Newton attempts within a stage.
const NEWTON_EVERY: usize = 200;
/// Sweep change below which a stage switches to Newton at once.
const NEWTON_KL: f64 = 1e-9;
const NEWTON_STEPS: usize = 50;

/// Mass below which an LP entry counts as zero.
const SUPPORT_TOL: f64 = 1e-12;

/// Entries of `η⊗ν` that are positive in some causal coupling.
///
/// Each LP maximizes the mass on entries not yet seen positive. Supports of
/// feasible plans combine by averaging, so the loop ends at the maximal
/// support once an LP finds no new entry.
fn feasible_support(
    eta: &PathMeasure<f64>,
    nu: &PathMeasure<f64>,
    set: &CausalityConstraintSet<f64>,
) -> Result<Vec<bool>> {
    let (n, m) = (eta.len(), nu.len());
    let candidate: Vec<bool> = (0..n * m).map(|k| eta.weights()[k / m] > 0.0 && nu.weights()[k % m] > 0.0).collect();
    let mut reached = vec![false; n * m];
    loop {
        let open: Vec<bool> = (0..n * m).map(|k| candidate[k] && !reached[k]).collect();
        if !open.iter().any(|&o| o) {
            break;
        }
        let cost = CostMatrix::from_fn(n, m, |i, j| if open[i * m + j] { -1.0 } else { 0.0 })?;
        let sol = solve_lp(eta, nu, &cost, Some(set), &SimplexOptions::default())?;
        let Some(plan) = sol.plan.filter(|_| sol.status == SolveStatus::Optimal) else {
            // keep the full reference; projections still converge, only slower
            return Ok(candidate);
        };
        let mut grew = false;
        for (k, &w) in plan.weights().iter().enumerate() {
            if open[k] && w > SUPPORT_TOL {
                reached[k] = true;
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    Ok(reached)
}

fn kl_change(new: &[f64], old: &[f64]) -> f64 {
    new.iter()
        .zip(old)
        .filter(|(a, _)| **a > f64::NEG_INFINITY)
        .map(|(&a, &b)| {
            let (ea, eb) = (libm::exp(a), libm::exp(b));
            ea * (a - b) - ea + eb
        })
        .sum::<f64>()
        .max(0.0)
}

/// Minimizes `⟨c,γ⟩ + ε·KL(γ | η⊗ν)` over causal couplings of `(η, ν)`.
///
/// `value` is the transport part `⟨c,γ⟩`; `gap` is the duality gap of the
/// regularized problem at the returned potentials.
pub fn solve_causal_entropic(
    eta: &PathMeasure<f64>,
    nu: &PathMeasure<f64>,
    cost: &CostMatrix,
    epsilon: f64,
    opts: &EntropicOptions,
) -> Result<TransportSolution<f64>> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid("epsilon must be positive and finite"));
    }
    if !cost.is_finite() {
        return Err(invalid("entropic solver requires a finite cost"));
    }
    if cost.rows() != eta.len() || cost.cols() != nu.len() {
        return Err(invalid("cost does not match the measures"));
    }
    let set = causality_constraints(eta.space(), nu.space(), eta)?;
    let (n, m) = (eta.len(), nu.len());
    let support = feasible_support(eta, nu, &set)?;
    let mut log_ref = vec![f64::NEG_INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let w = eta.weights()[i] * nu.weights()[j];
            if support[i * m + j] {
                log_ref[i * m + j] = libm::log(w);
            }
        }
    }
    let mut state = State {
        n,
        m,
        eta: eta.weights(),
        nu: nu.weights(),
        cost,
        chains: &set.equalities,
        log_ref,
        f: vec![0.0; n],
        g: vec![0.0; m],
        lambda: vec![0.0; set.len()],
        log_gamma: vec![0.0; n * m],
        eps: epsilon,
    };

    let mut schedule = Vec::new();
    let mut e = f64::max(cost.max_abs_finite(), epsilon);
    while e > epsilon {
        schedule.push(e);
        e /= opts.schedule_factor;
    }
    schedule.push(epsilon);

    let mut iterations = 0usize;
    let mut converged = false;
    let last = schedule.len() - 1;
    for (stage, &eps) in schedule.iter().enumerate() {
        state.eps = eps;
        state.rebuild();
        let (kl_tol, res_tol) = if stage == last { (opts.kl_tol, opts.residual_tol) } else { (1e-9, 1e-6) };
        let mut stage_sweeps = 0usize;
        while iterations < opts.max_iters {
            let old = state.log_gamma.clone();
            state.sweep();
            iterations += 1;
            stage_sweeps += 1;
            let kl = kl_change(&state.log_gamma, &old);
            let polish = kl <= NEWTON_KL || stage_sweeps.is_multiple_of(NEWTON_EVERY);
            if polish {
                state.newton(res_tol * 1e-2, NEWTON_STEPS);
            } else if kl > kl_tol {
                continue;
            }
            let plan = Coupling::from_parts_unchecked(eta.space().clone(), nu.space().clone(), state.plan());
            let residual = f64::max(marginal_residual(&plan, eta, nu), set.max_residual(&plan));
            if residual <= res_tol {
                if stage == last {
                    converged = true;
                }
                break;
            }
        }
    }

    let weights = state.plan();
    let plan = Coupling::from_parts_unchecked(eta.space().clone(), nu.space().clone(), weights);
    let marginal = marginal_residual(&plan, eta, nu);
    let constraint = set.max_residual(&plan);
    let value: f64 = plan.weights().iter().zip(cost.entries()).map(|(g, c)| g * c).sum();
    let rows = plan.first_marginal();
    let cols = plan.second_marginal();
    let mut gap = 0.0;
    for i in 0..n {
        gap += state.f[i] * (rows.weights()[i] - eta.weights()[i]);
    }
    for j in 0..m {
        gap += state.g[j] * (cols.weights()[j] - nu.weights()[j]);
    }
    for (e, lam) in set.equalities.iter().zip(&state.lambda) {
        gap += lam * e.residual(&plan);
    }
    let status = if converged { SolveStatus::Optimal } else { SolveStatus::NonConvergence };
    Ok(TransportSolution {
        status,
        value,
        plan: Some(plan),
        dual: Some(DualCertificate { row_potentials: state.f, col_potentials: state.g, multipliers: state.lambda }),
        gap,
        iterations,
        marginal_residual: marginal,
        constraint_residual: constraint,
    })
}
