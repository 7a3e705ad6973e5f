//! Discretized Wiener space on `[0, 1]`, Girsanov tilts by predictable drifts,
//! and Monte Carlo estimators for the entropy/transport identities.
//!
//! Paths are stored row-major: a path with `N` steps in dimension `d` is
//! `(N+1)·d` states starting at the origin, and its increments are `N·d`
//! values. A drift `b` defines the SDE `X_{k+1} = X_k + ΔB_k − b_k(X_{0..k})·dt`
//! and the tilted law `ν` of `X`, whose density against Wiener measure `μ` is
//! `ln ρ(w) = −Σ⟨b_k(w), Δw_k⟩ − ½Σ|b_k(w)|²dt`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::par::{map_chunks, map_items};
use crate::path_space::{FilteredPathSpace, PathMeasure};
use crate::rng::{stream, tags};
use crate::stats::{ks_p_value, ks_statistic_normal, LeastSquares, MCEstimate};
use crate::transport_solver::simplex::SimplexOptions;
use crate::transport_solver::{solve_classic_mk, CostMatrix, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncrementModel {
    Gaussian,
    /// `±√dt` per component with equal probability.
    Rademacher,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPathModel {
    steps: usize,
    dt: f64,
    dim: usize,
    increments: IncrementModel,
}

impl GaussianPathModel {
    pub fn new(steps: usize, dt: f64, dim: usize, increments: IncrementModel) -> Result<Self> {
        if steps == 0 || dim == 0 {
            return Err(invalid("model needs at least one step and one dimension"));
        }
        if !(dt > 0.0) || (steps as f64 * dt - 1.0).abs() > 1e-12 {
            return Err(invalid("steps·dt must equal 1"));
        }
        Ok(Self { steps, dt, dim, increments })
    }

    pub fn unit_horizon(steps: usize, dim: usize, increments: IncrementModel) -> Result<Self> {
        Self::new(steps, 1.0 / steps as f64, dim, increments)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn increments(&self) -> IncrementModel {
        self.increments
    }

    /// Number of scalar increments, `N·d`.
    pub fn len(&self) -> usize {
        self.steps * self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn draw_increments<R: rand_core::RngCore>(&self, rng: &mut R, out: &mut [f64]) {
        let sd = libm::sqrt(self.dt);
        match self.increments {
            IncrementModel::Gaussian => out.iter_mut().for_each(|v| {
                let z: f64 = StandardNormal.sample(rng);
                *v = sd * z;
            }),
            IncrementModel::Rademacher => out.iter_mut().for_each(|v| {
                *v = if rng.next_u32() & 1 == 1 { sd } else { -sd };
            }),
        }
    }

    fn noise(&self, seed: u64, tag: u64, sample: usize) -> Vec<f64> {
        let mut rng = stream(seed, tag, sample);
        let mut out = vec![0.0; self.len()];
        self.draw_increments(&mut rng, &mut out);
        out
    }
}

/// A predictable drift: `b_k` may read only the states `x_0..x_k`.
pub trait Drift: Sync {
    /// Writes `b_k` into `out` (length `dim`); `history` holds `x_0..x_k`.
    fn eval(&self, k: usize, history: &[f64], dim: usize, out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriftSpec {
    Zero,
    /// `b ≡ a` in every component.
    Constant {
        a: f64,
    },
    /// `b_k = λ·x_k`.
    Ou {
        lambda: f64,
    },
    /// `b_k = s·tanh(x_k)` componentwise.
    Tanh {
        scale: f64,
    },
}

/// Declared growth of a builtin drift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthBound {
    /// `|b_k| ≤ M` (Euclidean).
    Bounded(f64),
    /// `|b_k| ≤ L·|x_k|`.
    Linear(f64),
}

impl DriftSpec {
    pub fn growth(&self, dim: usize) -> GrowthBound {
        let rd = libm::sqrt(dim as f64);
        match *self {
            DriftSpec::Zero => GrowthBound::Bounded(0.0),
            DriftSpec::Constant { a } => GrowthBound::Bounded(a.abs() * rd),
            DriftSpec::Ou { lambda } => GrowthBound::Linear(lambda.abs()),
            DriftSpec::Tanh { scale } => GrowthBound::Bounded(scale.abs() * rd),
        }
    }

    /// True when `b` does not depend on the path.
    pub fn is_deterministic(&self) -> bool {
        matches!(self, DriftSpec::Zero | DriftSpec::Constant { .. })
    }
}

impl Drift for DriftSpec {
    fn eval(&self, _k: usize, history: &[f64], dim: usize, out: &mut [f64]) {
        let x = &history[history.len() - dim..];
        match *self {
            DriftSpec::Zero => out.fill(0.0),
            DriftSpec::Constant { a } => out.fill(a),
            DriftSpec::Ou { lambda } => out.iter_mut().zip(x).for_each(|(o, x)| *o = lambda * x),
            DriftSpec::Tanh { scale } => out.iter_mut().zip(x).for_each(|(o, x)| *o = scale * libm::tanh(*x)),
        }
    }
}

/// Drift values above this magnitude abort a sample.
pub const DRIFT_OVERFLOW: f64 = 1e12;

/// One simulated path with the noise that drove it.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    /// States `x_0..x_N`, `(N+1)·d` values.
    pub x: Vec<f64>,
    /// Driving increments `ΔB_k`.
    pub noise: Vec<f64>,
    /// Drift values `b_k(X_{0..k})` used by the recursion.
    pub drift: Vec<f64>,
}

impl SamplePath {
    pub fn increments(&self, dim: usize) -> Vec<f64> {
        increments_of(&self.x, dim)
    }
}

fn increments_of(x: &[f64], dim: usize) -> Vec<f64> {
    (dim..x.len()).map(|i| x[i] - x[i - dim]).collect()
}

fn path_of(increments: &[f64], dim: usize) -> Vec<f64> {
    let mut x = vec![0.0; increments.len() + dim];
    for i in 0..increments.len() {
        x[i + dim] = x[i] + increments[i];
    }
    x
}

/// Forward recursion from the origin; `Err(step)` on drift overflow.
pub fn simulate_with_noise(
    model: &GaussianPathModel,
    drift: &dyn Drift,
    noise: &[f64],
) -> core::result::Result<SamplePath, usize> {
    let (n, d, dt) = (model.steps, model.dim, model.dt);
    let mut x = vec![0.0; (n + 1) * d];
    let mut b = vec![0.0; n * d];
    for k in 0..n {
        let (hist, rest) = x.split_at_mut((k + 1) * d);
        let bk = &mut b[k * d..(k + 1) * d];
        drift.eval(k, hist, d, bk);
        if bk.iter().any(|v| !(v.abs() <= DRIFT_OVERFLOW)) {
            return Err(k);
        }
        for c in 0..d {
            rest[c] = hist[k * d + c] + noise[k * d + c] - bk[c] * dt;
        }
    }
    Ok(SamplePath { x, noise: noise.to_vec(), drift: b })
}

fn simulate_tagged(
    model: &GaussianPathModel,
    drift: &dyn Drift,
    seed: u64,
    tag: u64,
    sample: usize,
) -> Result<SamplePath> {
    simulate_with_noise(model, drift, &model.noise(seed, tag, sample))
        .map_err(|step| Error::DriftOverflow { sample, step })
}

/// The `sample`-th ν-path for `seed`.
pub fn simulate_sde(model: &GaussianPathModel, drift: &dyn Drift, seed: u64, sample: usize) -> Result<SamplePath> {
    simulate_tagged(model, drift, seed, tags::NU, sample)
}

pub fn simulate_batch(model: &GaussianPathModel, drift: &dyn Drift, seed: u64, n: usize) -> Result<Vec<SamplePath>> {
    map_items(n, |i| simulate_sde(model, drift, seed, i)).into_iter().collect()
}

/// Runs `f` on every sample index in parallel and keeps index order.
fn per_sample<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    map_items(n, f).into_iter().collect()
}

/// `ln dν/dμ` evaluated on the path with the given increments.
pub fn girsanov_log_density(model: &GaussianPathModel, drift: &dyn Drift, increments: &[f64]) -> f64 {
    let d = model.dim;
    let w = path_of(increments, d);
    let mut b = vec![0.0; d];
    let mut total = 0.0;
    for k in 0..model.steps {
        drift.eval(k, &w[..(k + 1) * d], d, &mut b);
        total += log_density_term(&b, &increments[k * d..(k + 1) * d], model.dt);
    }
    total
}

fn log_density_term(b: &[f64], dw: &[f64], dt: f64) -> f64 {
    let dot: f64 = b.iter().zip(dw).map(|(x, y)| x * y).sum();
    let sq: f64 = b.iter().map(|x| x * x).sum();
    -dot - 0.5 * sq * dt
}

/// Perturbed increment values `(v₊, v₋)` for a derivative along increment `i`.
fn fd_points(model: &GaussianPathModel, value: f64) -> (f64, f64) {
    let sd = libm::sqrt(model.dt);
    match model.increments {
        IncrementModel::Gaussian => {
            let h = 1e-5 * sd;
            (value + h, value - h)
        }
        IncrementModel::Rademacher => (sd, -sd),
    }
}

/// Malliavin derivative `D_k F` of a functional of the increments: a central
/// difference along increment `k` (step `1e-5·√dt`) in the Gaussian model and
/// the exact two-point difference over `±√dt` in the Rademacher model.
pub fn malliavin_fd(model: &GaussianPathModel, f: &dyn Fn(&[f64]) -> f64, increments: &[f64], k: usize) -> Vec<f64> {
    let d = model.dim;
    let mut w = increments.to_vec();
    (0..d)
        .map(|c| {
            let i = k * d + c;
            let (up, down) = fd_points(model, increments[i]);
            w[i] = up;
            let fu = f(&w);
            w[i] = down;
            let fd = f(&w);
            w[i] = increments[i];
            (fu - fd) / (up - down)
        })
        .collect()
}

/// All derivatives `D_{k,c} ln ρ` at once. Moving increment `k` shifts the
/// states after step `k` only, so terms before `k` cancel and are skipped;
/// otherwise this is the same difference quotient as [`malliavin_fd`].
pub fn log_density_gradient(model: &GaussianPathModel, drift: &dyn Drift, increments: &[f64]) -> Vec<f64> {
    let (n, d, dt) = (model.steps, model.dim, model.dt);
    let base = path_of(increments, d);
    let mut w = base.clone();
    let mut dw = increments.to_vec();
    let mut b = vec![0.0; d];
    let mut grad = vec![0.0; n * d];
    // b_k does not move when increment k moves
    let mut b_at = vec![0.0; n * d];
    for k in 0..n {
        drift.eval(k, &base[..(k + 1) * d], d, &mut b_at[k * d..(k + 1) * d]);
    }
    for k in 0..n {
        for c in 0..d {
            let i = k * d + c;
            let (up, down) = fd_points(model, increments[i]);
            let mut side = |value: f64, w: &mut Vec<f64>, dw: &mut Vec<f64>| -> f64 {
                let shift = value - increments[i];
                for j in k + 1..=n {
                    w[j * d + c] = base[j * d + c] + shift;
                }
                dw[i] = value;
                let mut total = log_density_term(&b_at[k * d..(k + 1) * d], &dw[k * d..(k + 1) * d], dt);
                for j in k + 1..n {
                    drift.eval(j, &w[..(j + 1) * d], d, &mut b);
                    total += log_density_term(&b, &dw[j * d..(j + 1) * d], dt);
                }
                total
            };
            let fu = side(up, &mut w, &mut dw);
            let fd = side(down, &mut w, &mut dw);
            for j in k + 1..=n {
                w[j * d + c] = base[j * d + c];
            }
            dw[i] = increments[i];
            grad[i] = (fu - fd) / (up - down);
        }
    }
    grad
}

/// `E_μ ρ` on μ-paths; the discrete stochastic exponential has mean exactly 1
/// in the Gaussian model.
pub fn density_mean(model: &GaussianPathModel, drift: &dyn Drift, seed: u64, n: usize) -> Result<MCEstimate> {
    let values = per_sample(n, |i| {
        let w = model.noise(seed, tags::DENSITY, i);
        Ok(libm::exp(girsanov_log_density(model, drift, &w)))
    })?;
    Ok(MCEstimate::from_samples(&values, seed))
}

/// Two estimators of `H(ν|μ)` on the same ν-samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    /// Mean of `ln ρ(X)`.
    pub density: MCEstimate,
    /// Mean of `½Σ|b_k(X)|²dt`.
    pub energy: MCEstimate,
    /// Paired difference `density − energy`.
    pub difference: MCEstimate,
}

fn energy(drift: &[f64], dt: f64) -> f64 {
    drift.iter().map(|v| v * v).sum::<f64>() * dt
}

pub fn relative_entropy(model: &GaussianPathModel, drift: &dyn Drift, seed: u64, n: usize) -> Result<EntropyEstimate> {
    let rows = per_sample(n, |i| {
        let p = simulate_sde(model, drift, seed, i)?;
        let lr = girsanov_log_density(model, drift, &p.increments(model.dim));
        Ok((lr, 0.5 * energy(&p.drift, model.dt)))
    })?;
    let a: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let diff: Vec<f64> = rows.iter().map(|r| r.0 - r.1).collect();
    Ok(EntropyEstimate {
        density: MCEstimate::from_samples(&a, seed),
        energy: MCEstimate::from_samples(&b, seed),
        difference: MCEstimate::from_samples(&diff, seed),
    })
}

/// Reconstructs the Girsanov shift `V∘X` from a path alone:
/// `ΔV_k = ΔX_k + b_k(X)·dt`.
pub fn girsanov_shift_increments(model: &GaussianPathModel, drift: &dyn Drift, x: &[f64]) -> Vec<f64> {
    let d = model.dim;
    let mut out = increments_of(x, d);
    let mut b = vec![0.0; d];
    for k in 0..model.steps {
        drift.eval(k, &x[..(k + 1) * d], d, &mut b);
        for c in 0..d {
            out[k * d + c] += b[c] * model.dt;
        }
    }
    out
}

/// Discrete `|u|²_H = Σ|Δu_k|²/dt` for `u = X − Y` given both increment vectors.
fn h_distance_sq(dx: &[f64], dy: &[f64], dt: f64) -> f64 {
    dx.iter().zip(dy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / dt
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollmerCheck {
    /// `E_ν|V−I|²_H` with `V` reconstructed from `X`.
    pub energy: MCEstimate,
    /// `2·E_ν ln ρ` on the same samples.
    pub two_h: MCEstimate,
    /// Paired `two_h − energy`.
    pub difference: MCEstimate,
}

pub fn follmer_energy(model: &GaussianPathModel, drift: &dyn Drift, seed: u64, n: usize) -> Result<FollmerCheck> {
    let rows = per_sample(n, |i| {
        let p = simulate_sde(model, drift, seed, i)?;
        let dx = p.increments(model.dim);
        let dv = girsanov_shift_increments(model, drift, &p.x);
        let e = h_distance_sq(&dv, &dx, model.dt);
        let two_h = 2.0 * girsanov_log_density(model, drift, &dx);
        Ok((e, two_h))
    })?;
    let e: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let h: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let diff: Vec<f64> = rows.iter().map(|r| r.1 - r.0).collect();
    Ok(FollmerCheck {
        energy: MCEstimate::from_samples(&e, seed),
        two_h: MCEstimate::from_samples(&h, seed),
        difference: MCEstimate::from_samples(&diff, seed),
    })
}

/// Samples pooled into the normality test.
pub const KS_SAMPLES: usize = 2000;
/// Significance below which the normality test flags the plan.
pub const KS_LEVEL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalPlanReport {
    /// `E|X − V∘X|²_H` along the plan `(V∘X, X)`.
    pub cost: MCEstimate,
    /// KS distance of the standardized increments of `V∘X` from `N(0,1)`;
    /// `None` in the Rademacher model.
    pub ks_statistic: Option<f64>,
    pub ks_p_value: Option<f64>,
    /// Largest `|ΔV∘X − ΔB|` over all samples; the reconstruction recovers the
    /// driving noise exactly up to rounding.
    pub max_reconstruction_error: f64,
}

impl OptimalPlanReport {
    pub fn normality_ok(&self) -> bool {
        self.ks_p_value.is_none_or(|p| p >= KS_LEVEL)
    }
}

pub fn optimal_plan_cost(
    model: &GaussianPathModel,
    drift: &dyn Drift,
    seed: u64,
    n: usize,
) -> Result<OptimalPlanReport> {
    let sd = libm::sqrt(model.dt);
    let rows = per_sample(n, |i| {
        let p = simulate_sde(model, drift, seed, i)?;
        let dv = girsanov_shift_increments(model, drift, &p.x);
        let cost = h_distance_sq(&p.increments(model.dim), &dv, model.dt);
        let err = dv.iter().zip(&p.noise).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let z: Vec<f64> = if i < KS_SAMPLES { dv.iter().map(|v| v / sd).collect() } else { Vec::new() };
        Ok((cost, err, z))
    })?;
    let costs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let max_err = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let (ks_statistic, ks_p) = match model.increments {
        IncrementModel::Gaussian => {
            let mut z: Vec<f64> = rows.into_iter().flat_map(|r| r.2).collect();
            let stat = ks_statistic_normal(&mut z);
            (Some(stat), Some(ks_p_value(stat, z.len())))
        }
        IncrementModel::Rademacher => (None, None),
    };
    Ok(OptimalPlanReport {
        cost: MCEstimate::from_samples(&costs, seed),
        ks_statistic,
        ks_p_value: ks_p,
        max_reconstruction_error: max_err,
    })
}

/// Causal couplings of `(μ, ν)` built from a ν-sample `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingPlan {
    /// `B = V∘X`.
    Optimal,
    /// `ΔB_k = ΔV∘X_k` for `k < m`, independent increments afterwards.
    Hybrid(usize),
    /// `B` independent of `X`.
    Product,
}

impl CouplingPlan {
    fn switch_step(&self, steps: usize) -> usize {
        match *self {
            CouplingPlan::Optimal => steps,
            CouplingPlan::Hybrid(m) => m.min(steps),
            CouplingPlan::Product => 0,
        }
    }
}

/// A ν-path `X` and the Brownian increments paired with it by `plan`.
pub fn coupled_sample(
    model: &GaussianPathModel,
    drift: &dyn Drift,
    plan: CouplingPlan,
    seed: u64,
    sample: usize,
) -> Result<(SamplePath, Vec<f64>)> {
    let p = simulate_sde(model, drift, seed, sample)?;
    let m = plan.switch_step(model.steps);
    let mut b = girsanov_shift_increments(model, drift, &p.x);
    if m < model.steps {
        let fresh = model.noise(seed, tags::FRESH, sample);
        let d = model.dim;
        b[m * d..].copy_from_slice(&fresh[m * d..]);
    }
    Ok((p, b))
}

/// `E|X − B|²_H` for the hybrid plan switching to fresh noise at step `m`.
pub fn hybrid_coupling_cost(
    model: &GaussianPathModel,
    drift: &dyn Drift,
    m: usize,
    seed: u64,
    n: usize,
) -> Result<MCEstimate> {
    if m > model.steps {
        return Err(invalid("switch step exceeds the number of steps"));
    }
    let costs = per_sample(n, |i| {
        let (p, b) = coupled_sample(model, drift, CouplingPlan::Hybrid(m), seed, i)?;
        Ok(h_distance_sq(&p.increments(model.dim), &b, model.dt))
    })?;
    Ok(MCEstimate::from_samples(&costs, seed))
}

/// Regression features of component `c` at step `k`:
/// `{1, x_k, x_k², max_{j≤k} x_j, Σ_{j<k} x_j·dt}`.
pub const FEATURES: usize = 5;

fn features(x: &[f64], dim: usize, c: usize, k: usize, dt: f64) -> [f64; FEATURES] {
    let xk = x[k * dim + c];
    let mut max = f64::NEG_INFINITY;
    let mut integral = 0.0;
    for j in 0..=k {
        let v = x[j * dim + c];
        max = max.max(v);
        if j < k {
            integral += v * dt;
        }
    }
    [1.0, xk, xk * xk, max, integral]
}

/// Residual of the orthogonality relation at one step and component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResidual {
    pub step: usize,
    pub component: usize,
    /// RMS of the regression estimate of `E[Δu_k/dt + b_k | X_{0..k}]`.
    pub residual: f64,
    /// Noise level of that RMS under a zero conditional mean, `√(rank·σ̂²/n)`.
    pub standard_error: f64,
    pub condition: f64,
}

/// Per-(step, component) normal equations merged in chunk order, plus the
/// largest per-sample diagnostic returned by `f`.
fn accumulate<F>(model: &GaussianPathModel, n: usize, q: usize, f: F) -> Result<(Vec<LeastSquares>, f64)>
where
    F: Fn(usize, &mut [LeastSquares]) -> Result<f64> + Sync + Send,
{
    let cells = model.len();
    let parts = map_chunks(n, |range| -> Result<(Vec<LeastSquares>, f64)> {
        let mut acc = vec![LeastSquares::new(FEATURES, q); cells];
        let mut worst = 0.0f64;
        for i in range {
            worst = worst.max(f(i, &mut acc)?);
        }
        Ok((acc, worst))
    });
    let mut total = vec![LeastSquares::new(FEATURES, q); cells];
    let mut worst = 0.0f64;
    for part in parts {
        let (part, w) = part?;
        worst = worst.max(w);
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(&p);
        }
    }
    Ok((total, worst))
}

/// Regresses `Δu_k/dt + b_k(X)` with `u = X − B` on prefix features of `X`.
pub fn orthogonality_residual(
    model: &GaussianPathModel,
    drift: &dyn Drift,
    plan: CouplingPlan,
    seed: u64,
    n: usize,
) -> Result<Vec<StepResidual>> {
    let (d, dt) = (model.dim, model.dt);
    let (acc, _) = accumulate(model, n, 1, |i, acc| {
        let (p, b) = coupled_sample(model, drift, plan, seed, i)?;
        let dx = p.increments(d);
        for k in 0..model.steps {
            for c in 0..d {
                let j = k * d + c;
                let y = (dx[j] - b[j]) / dt + p.drift[j];
                acc[j].add(&features(&p.x, d, c, k, dt), &[y]);
            }
        }
        Ok(0.0)
    })?;
    Ok(acc
        .iter()
        .enumerate()
        .map(|(j, ls)| {
            let fit = ls.solve(0);
            let var = ls.residual_variance(&fit, 0);
            StepResidual {
                step: j / d,
                component: j % d,
                residual: libm::sqrt(ls.fitted_mean_square(&fit)),
                standard_error: libm::sqrt(fit.rank as f64 * var / ls.len() as f64),
                condition: fit.condition,
            }
        })
        .collect())
}

/// Largest number of scalar increments enumerated by the Clark–Ocone check.
pub const CLARK_OCONE_MAX: usize = 16;

/// Maximum over all `2^{N·d}` Rademacher paths of
/// `|F − E F − Σ_j E[D_j F | F_{j−1}]·Δw_j|`, components ordered `(k, c)`.
pub fn clark_ocone_residual(model: &GaussianPathModel, f: &dyn Fn(&[f64]) -> f64) -> Result<f64> {
    if model.increments != IncrementModel::Rademacher {
        return Err(invalid("exact Clark–Ocone enumeration needs the Rademacher model"));
    }
    let n = model.len();
    if n > CLARK_OCONE_MAX {
        return Err(Error::SizeGuard(alloc::format!("{n} increments exceeds the enumeration limit {CLARK_OCONE_MAX}")));
    }
    let sd = libm::sqrt(model.dt);
    let count = 1usize << n;
    // bit (n−1−j) of the index is increment j, so prefixes are high bits
    let incr = |p: usize| -> Vec<f64> { (0..n).map(|j| if (p >> (n - 1 - j)) & 1 == 1 { sd } else { -sd }).collect() };
    let values: Vec<f64> = (0..count).map(|p| f(&incr(p))).collect();
    let mean = values.iter().sum::<f64>() / count as f64;
    let mut repr = vec![mean; count];
    let mut w = vec![0.0; n];
    for j in 0..n {
        let block = count >> j;
        let half = block / 2;
        for start in (0..count).step_by(block) {
            // average D_j F over every continuation of this prefix
            let mut acc = 0.0;
            for p in start..start + half {
                w.copy_from_slice(&incr(p));
                let d = malliavin_fd(model, f, &w, j / model.dim)[j % model.dim];
                acc += d;
            }
            let psi = acc / half as f64;
            for p in start..start + block {
                let up = (p >> (n - 1 - j)) & 1 == 1;
                repr[p] += psi * if up { sd } else { -sd };
            }
        }
    }
    Ok(values.iter().zip(&repr).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftRecovery {
    /// `‖fit − b‖₂ / ‖b‖₂` over all samples, steps and components; `NaN` when `b ≡ 0`.
    pub relative_l2_error: f64,
    /// Root mean square of `fit − b`.
    pub rms_error: f64,
    /// Largest `|−D_k ln ρ − b_k|` before conditioning (exact for deterministic drifts).
    pub max_pointwise_error: f64,
    /// Worst condition number over the per-step regressions.
    pub max_condition: f64,
}

/// Recovers `b_k = −E_ν[D_k ln ρ | X_{0..k}]` by regression.
pub fn drift_from_density(model: &GaussianPathModel, drift: &dyn Drift, seed: u64, n: usize) -> Result<DriftRecovery> {
    let (d, dt) = (model.dim, model.dt);
    let (acc, pointwise) = accumulate(model, n, 2, |i, acc| {
        let p = simulate_sde(model, drift, seed, i)?;
        let g = log_density_gradient(model, drift, &p.increments(d));
        for k in 0..model.steps {
            for c in 0..d {
                let j = k * d + c;
                acc[j].add(&features(&p.x, d, c, k, dt), &[-g[j], p.drift[j]]);
            }
        }
        Ok(g.iter().zip(&p.drift).map(|(g, b)| (-g - b).abs()).fold(0.0, f64::max))
    })?;
    let mut err = 0.0;
    let mut norm = 0.0;
    let mut count = 0usize;
    let mut max_condition = 0.0f64;
    for ls in &acc {
        let fit = ls.solve(0);
        err += ls.squared_error_against(&fit, 1);
        norm += ls.response_square_sum(1);
        count += ls.len();
        max_condition = max_condition.max(fit.condition);
    }
    Ok(DriftRecovery {
        relative_l2_error: if norm > 0.0 { libm::sqrt(err / norm) } else { f64::NAN },
        rms_error: libm::sqrt(err / count.max(1) as f64),
        max_pointwise_error: pointwise,
        max_condition,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrongSolutionGap {
    /// `E_μ|U(B) − B|²_H`.
    pub transport: MCEstimate,
    /// `2·E_μ ln ρ(U(B))`, an estimate of `2H` since `U(B) ~ ν`.
    pub two_h: MCEstimate,
    /// Paired `transport − two_h`.
    pub gap: MCEstimate,
}

/// Solves the SDE forward on μ-samples `B` and compares `|U − I|²_H` with `2H`.
pub fn strong_solution_gap(
    model: &GaussianPathModel,
    drift: &dyn Drift,
    seed: u64,
    n: usize,
) -> Result<StrongSolutionGap> {
    let rows = per_sample(n, |i| {
        let u = simulate_tagged(model, drift, seed, tags::MU, i)?;
        let du = u.increments(model.dim);
        // ΔU_k − ΔB_k = −b_k(U)·dt by the recursion
        let cost = energy(&u.drift, model.dt);
        let two_h = 2.0 * girsanov_log_density(model, drift, &du);
        Ok((cost, two_h))
    })?;
    let a: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let g: Vec<f64> = rows.iter().map(|r| r.0 - r.1).collect();
    Ok(StrongSolutionGap {
        transport: MCEstimate::from_samples(&a, seed),
        two_h: MCEstimate::from_samples(&b, seed),
        gap: MCEstimate::from_samples(&g, seed),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualCertificateReport {
    /// `E_ν f` with `f = Σ|b_k|²dt` (the second potential is 0).
    pub certificate: MCEstimate,
    pub two_h: MCEstimate,
    /// Paired `certificate − two_h`; zero mean at attainment.
    pub attainment: MCEstimate,
    /// `E[Σ ċ_k dt − f]` along the optimal plan with `ċ_k = |Δu_k/dt|²`;
    /// must not be negative.
    pub slack: MCEstimate,
}

pub fn dual_certificate(
    model: &GaussianPathModel,
    drift: &dyn Drift,
    seed: u64,
    n: usize,
) -> Result<DualCertificateReport> {
    let (d, dt) = (model.dim, model.dt);
    let rows = per_sample(n, |i| {
        let (p, b) = coupled_sample(model, drift, CouplingPlan::Optimal, seed, i)?;
        let dx = p.increments(d);
        let f = energy(&p.drift, dt);
        let rate: f64 = dx.iter().zip(&b).map(|(x, y)| ((x - y) / dt) * ((x - y) / dt)).sum::<f64>() * dt;
        let two_h = 2.0 * girsanov_log_density(model, drift, &dx);
        Ok((f, two_h, rate - f))
    })?;
    let f: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let h: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let a: Vec<f64> = rows.iter().map(|r| r.0 - r.1).collect();
    let s: Vec<f64> = rows.iter().map(|r| r.2).collect();
    Ok(DualCertificateReport {
        certificate: MCEstimate::from_samples(&f, seed),
        two_h: MCEstimate::from_samples(&h, seed),
        attainment: MCEstimate::from_samples(&a, seed),
        slack: MCEstimate::from_samples(&s, seed),
    })
}

/// Largest cloud accepted by the empirical transport bound.
pub const MAX_CLOUD: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TalagrandOptions {
    pub samples: usize,
    /// Points per cloud, at most [`MAX_CLOUD`].
    pub cloud: usize,
    pub batches: usize,
    /// Samples for the Fisher information.
    pub fisher_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TalagrandReport {
    /// Cost of the adapted plan `(V∘X, X)`, an upper bound for `d²`.
    pub d2_upper: MCEstimate,
    /// Mean over batches of the empirical quadratic transport cost between
    /// terminal values of paired μ- and ν-clouds.
    pub d2_lower: MCEstimate,
    pub two_h: MCEstimate,
    /// `J = E_ν Σ|D_k ln ρ|²dt`.
    pub fisher: MCEstimate,
}

impl TalagrandReport {
    /// `2H − d²_lower` and its standard error.
    pub fn talagrand_slack(&self) -> (f64, f64) {
        (self.two_h.value - self.d2_lower.value, crate::stats::joint_se(&self.two_h, &self.d2_lower))
    }

    /// `J − 2H` and its standard error.
    pub fn log_sobolev_slack(&self) -> (f64, f64) {
        (self.fisher.value - self.two_h.value, crate::stats::joint_se(&self.fisher, &self.two_h))
    }
}

/// Terminal value is 1-Lipschitz from `|·|_H` (Cauchy–Schwarz with `N·dt = 1`),
/// so transport between terminal laws bounds `d²` from below. Each cloud pairs
/// `B` with `U(B)` (common noise), and the batch cost is the classic LP value.
pub fn talagrand_log_sobolev(
    model: &GaussianPathModel,
    drift: &dyn Drift,
    seed: u64,
    opts: &TalagrandOptions,
) -> Result<TalagrandReport> {
    if opts.cloud == 0 || opts.cloud > MAX_CLOUD {
        return Err(Error::SizeGuard(alloc::format!("cloud size must be in 1..={MAX_CLOUD}")));
    }
    let d = model.dim;
    let plan = optimal_plan_cost(model, drift, seed, opts.samples)?;
    let entropy = relative_entropy(model, drift, seed, opts.samples)?;
    let space = Arc::new(FilteredPathSpace::coordinate(&[opts.cloud])?);
    let uniform = PathMeasure::<f64>::uniform(space);
    let batch_values = per_sample(opts.batches, |batch| {
        let mut mu = Vec::with_capacity(opts.cloud);
        let mut nu = Vec::with_capacity(opts.cloud);
        for s in 0..opts.cloud {
            let p = simulate_tagged(model, drift, seed, tags::CLOUD, batch * opts.cloud + s)?;
            let n = model.steps;
            let b_end: Vec<f64> = (0..d).map(|c| p.noise.iter().skip(c).step_by(d).sum()).collect();
            mu.push(b_end);
            nu.push(p.x[n * d..].to_vec());
        }
        let cost = CostMatrix::from_fn(opts.cloud, opts.cloud, |i, j| {
            mu[i].iter().zip(&nu[j]).map(|(a, b)| (a - b) * (a - b)).sum()
        })?;
        let sol = solve_classic_mk(&uniform, &uniform, &cost, &SimplexOptions::default())?;
        if sol.status != SolveStatus::Optimal {
            return Err(Error::NonConvergence { iterations: sol.iterations, residual: sol.marginal_residual });
        }
        Ok(sol.value)
    })?;
    let fisher = per_sample(opts.fisher_samples, |i| {
        let p = simulate_tagged(model, drift, seed, tags::FISHER, i)?;
        let g = log_density_gradient(model, drift, &p.increments(d));
        Ok(g.iter().map(|v| v * v).sum::<f64>() * model.dt)
    })?;
    Ok(TalagrandReport {
        d2_upper: plan.cost,
        d2_lower: MCEstimate::from_samples(&batch_values, seed),
        two_h: entropy.density.scaled(2.0),
        fisher: MCEstimate::from_samples(&fisher, seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(n: usize) -> GaussianPathModel {
        GaussianPathModel::unit_horizon(n, 1, IncrementModel::Gaussian).unwrap()
    }

    #[test]
    fn density_has_unit_mean() {
        let m = gauss(20);
        for drift in [
            DriftSpec::Zero,
            DriftSpec::Constant { a: 0.7 },
            DriftSpec::Ou { lambda: 1.0 },
            DriftSpec::Tanh { scale: 1.0 },
        ] {
            let e = density_mean(&m, &drift, 5, 20_000).unwrap();
            assert!(crate::stats::within_se(e.value, 1.0, e.standard_error, 3.0), "{drift:?} {e:?}");
        }
        assert_eq!(density_mean(&m, &DriftSpec::Zero, 5, 10).unwrap().value, 1.0);
    }

    #[test]
    fn model_validation() {
        assert!(GaussianPathModel::new(4, 0.25, 1, IncrementModel::Gaussian).is_ok());
        assert!(GaussianPathModel::new(4, 0.3, 1, IncrementModel::Gaussian).is_err());
        assert!(GaussianPathModel::new(0, 1.0, 1, IncrementModel::Gaussian).is_err());
    }

    #[test]
    fn zero_and_constant_drift_recursions() {
        let m = gauss(8);
        let p = simulate_sde(&m, &DriftSpec::Zero, 3, 0).unwrap();
        let b = path_of(&p.noise, 1);
        assert_eq!(p.x, b);
        let q = simulate_sde(&m, &DriftSpec::Constant { a: 0.7 }, 3, 0).unwrap();
        for k in 0..=8 {
            assert!((q.x[k] - (b[k] - 0.7 * k as f64 * m.dt())).abs() < 1e-14);
        }
    }

    #[test]
    fn log_density_values() {
        let m = gauss(4);
        let zeros = [0.0; 4];
        assert_eq!(girsanov_log_density(&m, &DriftSpec::Zero, &[0.3, -0.1, 0.2, 0.5]), 0.0);
        assert!((girsanov_log_density(&m, &DriftSpec::Constant { a: 1.0 }, &zeros) + 0.5).abs() < 1e-15);
        let w = [0.2, -0.1, 0.3, 0.1];
        assert!((girsanov_log_density(&m, &DriftSpec::Constant { a: 1.0 }, &w) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn overflow_aborts_sample() {
        struct Wild;
        impl Drift for Wild {
            fn eval(&self, k: usize, _h: &[f64], _d: usize, out: &mut [f64]) {
                out.fill(if k == 2 { 1e13 } else { 0.0 });
            }
        }
        let m = gauss(4);
        assert_eq!(simulate_sde(&m, &Wild, 1, 5), Err(Error::DriftOverflow { sample: 5, step: 2 }));
    }

    #[test]
    fn malliavin_of_simple_functionals() {
        let m = gauss(16);
        let mut w: Vec<f64> = (0..16).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.05).collect();
        let s: f64 = w.iter().sum();
        w[0] += 0.5 - s;
        let terminal = |v: &[f64]| v.iter().sum::<f64>();
        let square = |v: &[f64]| v.iter().sum::<f64>().powi(2);
        let constant = |_: &[f64]| 3.0;
        for k in [0, 7, 15] {
            assert!((malliavin_fd(&m, &terminal, &w, k)[0] - 1.0).abs() < 1e-9);
            assert!((malliavin_fd(&m, &square, &w, k)[0] - 1.0).abs() < 1e-8);
            assert_eq!(malliavin_fd(&m, &constant, &w, k)[0], 0.0);
        }
    }

    #[test]
    fn incremental_gradient_matches_generic_difference() {
        for model in [gauss(12), GaussianPathModel::unit_horizon(6, 2, IncrementModel::Gaussian).unwrap()] {
            for drift in [DriftSpec::Ou { lambda: 1.3 }, DriftSpec::Tanh { scale: 0.8 }, DriftSpec::Constant { a: 1.0 }]
            {
                let p = simulate_sde(&model, &drift, 9, 1).unwrap();
                let dx = p.increments(model.dim());
                let g = log_density_gradient(&model, &drift, &dx);
                let f = |v: &[f64]| girsanov_log_density(&model, &drift, v);
                for k in 0..model.steps() {
                    let fd = malliavin_fd(&model, &f, &dx, k);
                    for c in 0..model.dim() {
                        assert!((g[k * model.dim() + c] - fd[c]).abs() < 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn ou_gradient_matches_analytic_form() {
        // −D_j ln ρ = λ w_j + λ Σ_{k>j} (Δw_k + λ w_k dt)
        let m = gauss(10);
        let lambda = 0.9;
        let p = simulate_sde(&m, &DriftSpec::Ou { lambda }, 4, 2).unwrap();
        let dx = p.increments(1);
        let g = log_density_gradient(&m, &DriftSpec::Ou { lambda }, &dx);
        for j in 0..10 {
            let tail: f64 = (j + 1..10).map(|k| dx[k] + lambda * p.x[k] * m.dt()).sum();
            let exact = lambda * p.x[j] + lambda * tail;
            assert!((-g[j] - exact).abs() < 1e-8, "{j}");
        }
    }

    #[test]
    fn clark_ocone_is_exact_for_rademacher_walks() {
        let m = GaussianPathModel::unit_horizon(6, 1, IncrementModel::Rademacher).unwrap();
        let sq = |v: &[f64]| v.iter().sum::<f64>().powi(2);
        assert!(clark_ocone_residual(&m, &sq).unwrap() <= 1e-12);
        let lin = |v: &[f64]| v.iter().enumerate().map(|(i, x)| (i as f64 + 1.0) * x).sum::<f64>();
        assert!(clark_ocone_residual(&m, &lin).unwrap() <= 1e-12);
        let m2 = GaussianPathModel::unit_horizon(3, 2, IncrementModel::Rademacher).unwrap();
        let mixed = |v: &[f64]| (v[0] * v[3] + v[5]).exp() * v[2];
        assert!(clark_ocone_residual(&m2, &mixed).unwrap() <= 1e-12);
        assert!(clark_ocone_residual(&gauss(4), &sq).is_err());
        let big = GaussianPathModel::unit_horizon(17, 1, IncrementModel::Rademacher).unwrap();
        assert!(matches!(clark_ocone_residual(&big, &sq), Err(Error::SizeGuard(_))));
    }

    #[test]
    fn estimates_do_not_depend_on_chunking() {
        let m = gauss(20);
        let d = DriftSpec::Tanh { scale: 1.0 };
        let a = relative_entropy(&m, &d, 11, 1500).unwrap();
        let b = relative_entropy(&m, &d, 11, 1500).unwrap();
        assert_eq!(a, b);
        let batch = simulate_batch(&m, &d, 11, 1500).unwrap();
        assert_eq!(batch[1234], simulate_sde(&m, &d, 11, 1234).unwrap());
    }

    #[test]
    fn zero_drift_checks_vanish() {
        let m = gauss(10);
        let z = DriftSpec::Zero;
        let h = relative_entropy(&m, &z, 1, 200).unwrap();
        assert_eq!((h.density.value, h.energy.value), (0.0, 0.0));
        assert_eq!(follmer_energy(&m, &z, 1, 200).unwrap().energy.value, 0.0);
        assert_eq!(optimal_plan_cost(&m, &z, 1, 200).unwrap().cost.value, 0.0);
        assert_eq!(strong_solution_gap(&m, &z, 1, 200).unwrap().gap.value, 0.0);
        assert_eq!(dual_certificate(&m, &z, 1, 200).unwrap().certificate.value, 0.0);
        let r = drift_from_density(&m, &z, 1, 200).unwrap();
        assert!(r.rms_error < 1e-9 && r.max_pointwise_error < 1e-9);
    }

    #[test]
    fn hybrid_plan_interpolates() {
        let m = gauss(4);
        let d = DriftSpec::Constant { a: 1.0 };
        let full = hybrid_coupling_cost(&m, &d, 4, 2, 500).unwrap();
        assert!((full.value - 1.0).abs() < 1e-12);
        let (p, b) = coupled_sample(&m, &d, CouplingPlan::Hybrid(2), 2, 3).unwrap();
        assert!(b[..2].iter().zip(&p.noise).all(|(x, y)| (x - y).abs() < 1e-15));
        let prod = coupled_sample(&m, &d, CouplingPlan::Product, 2, 3).unwrap().1;
        assert_eq!(&prod[2..], &b[2..]);
    }
}
