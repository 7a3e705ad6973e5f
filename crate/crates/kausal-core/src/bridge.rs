//! Schrödinger bridges between a finite initial law and a finite terminal law
//! on `ℝ^d`, with Brownian reference of unit variance over the horizon.
//!
//! Each terminal atom `y_j` owns the cube `cell_j` of side `h` centred on it,
//! and the terminal constraint is `P(X_1 ∈ cell_j) = q_j`. The reference
//! endpoint law is `R_ij = p_i·P(x_i + W_1 ∈ cell_j)`. The bridge is the
//! mixture `Σ π_ij μ(· | X_0 = x_i, X_1 ∈ cell_j)`, whose density against the
//! reference is `π_ij/R_ij` on each endpoint event, so its path entropy is
//! exactly `KL(π | R)` and the problem reduces to fitting `π` by iterative
//! proportional fitting.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{invalid, Error, Result};
use crate::gaussian_lab::{GaussianPathModel, IncrementModel};
use crate::par::map_items;
use crate::rng::{stream, tags};
use crate::stats::MCEstimate;

/// Finitely supported measure on `ℝ^d`; points are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl GridMeasure {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || weights.is_empty() || points.len() != dim * weights.len() {
            return Err(invalid("grid measure needs dim·len point coordinates"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(invalid("grid points must be finite"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("grid weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("grid weights sum to {total}, expected 1")));
        }
        Ok(Self { dim, points, weights })
    }

    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        let dim = point.len();
        Self::new(dim, point, vec![1.0])
    }

    /// `N(0,1)` discretized on `count` equally spaced points of `[−r, r]`,
    /// each weighted by the probability of its cell (renormalized).
    pub fn discretized_standard_normal(count: usize, r: f64) -> Result<Self> {
        if count < 2 || !(r > 0.0) {
            return Err(invalid("need at least two grid points and a positive range"));
        }
        let h = 2.0 * r / (count - 1) as f64;
        let points: Vec<f64> = (0..count).map(|i| -r + h * i as f64).collect();
        let raw: Vec<f64> = points.iter().map(|&y| interval_prob(y - h / 2.0, y + h / 2.0)).collect();
        let total: f64 = raw.iter().sum();
        Self::new(1, points, raw.iter().map(|w| w / total).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Smallest sup-norm distance between two distinct atoms.
    pub fn min_spacing(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                let d = self.point(i).iter().zip(self.point(j)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointMarginals {
    pub q0: GridMeasure,
    pub q1: GridMeasure,
    /// Side of the terminal cells.
    pub cell: f64,
}

impl EndpointMarginals {
    /// `cell` defaults to the minimal spacing of `q1`; a single terminal atom
    /// needs it explicitly. Cells may touch but not overlap.
    pub fn new(q0: GridMeasure, q1: GridMeasure, cell: Option<f64>) -> Result<Self> {
        if q0.dim() != q1.dim() {
            return Err(invalid("initial and terminal laws live in different dimensions"));
        }
        let spacing = q1.min_spacing();
        let cell = match (cell, spacing) {
            (Some(h), _) => h,
            (None, Some(s)) => s,
            (None, None) => return Err(invalid("a single terminal atom needs an explicit cell width")),
        };
        if !(cell > 0.0) || !cell.is_finite() {
            return Err(invalid("cell width must be positive"));
        }
        if spacing.is_some_and(|s| cell > s * (1.0 + 1e-12)) {
            return Err(invalid("terminal cells overlap"));
        }
        Ok(Self { q0, q1, cell })
    }

    /// Initial law `δ_0`.
    pub fn from_origin(q1: GridMeasure, cell: Option<f64>) -> Result<Self> {
        let q0 = GridMeasure::dirac(vec![0.0; q1.dim()])?;
        Self::new(q0, q1, cell)
    }

    pub fn dim(&self) -> usize {
        self.q1.dim()
    }

    /// Index of the cell containing `x`, if any.
    pub fn cell_of(&self, x: &[f64]) -> Option<usize> {
        let half = self.cell / 2.0;
        (0..self.q1.len()).find(|&j| self.q1.point(j).iter().zip(x).all(|(y, v)| (v - y).abs() <= half))
    }
}

/// `P(a < Z < b)` for standard normal `Z`, computed from the tail nearer to
/// zero so that `(a, b)` and `(−b, −a)` give identical bits.
pub fn interval_prob(a: f64, b: f64) -> f64 {
    let s = core::f64::consts::FRAC_1_SQRT_2;
    if a >= 0.0 {
        0.5 * (libm::erfc(a * s) - libm::erfc(b * s))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b * s) - libm::erfc(-a * s))
    } else {
        // add the tails smallest first so mirrored intervals round alike
        let (t1, t2) = (0.5 * libm::erfc(b * s), 0.5 * libm::erfc(-a * s));
        1.0 - (f64::min(t1, t2) + f64::max(t1, t2))
    }
}

/// `ln erfc(x)`, switching to the asymptotic series where `erfc` underflows.
fn log_erfc(x: f64) -> f64 {
    if x < 25.0 {
        libm::log(libm::erfc(x))
    } else {
        let x2 = x * x;
        -x2 - libm::log(x * libm::sqrt(core::f64::consts::PI)) + libm::log1p(-0.5 / x2 + 0.75 / (x2 * x2))
    }
}

/// `ln P(a < Z < b)`, finite even deep in the tails.
fn log_interval_prob(a: f64, b: f64) -> f64 {
    let s = core::f64::consts::FRAC_1_SQRT_2;
    let tail = |lo: f64, hi: f64| {
        // ln(½erfc(lo) − ½erfc(hi)) for 0 ≤ lo < hi
        let la = log_erfc(lo * s);
        let lb = log_erfc(hi * s);
        core::f64::consts::LN_2.mul_add(-1.0, la) + libm::log1p(-libm::exp(lb - la))
    };
    if a >= 0.0 {
        tail(a, b)
    } else if b <= 0.0 {
        tail(-b, -a)
    } else {
        libm::log(interval_prob(a, b))
    }
}

fn log_phi(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * libm::log(2.0 * core::f64::consts::PI)
}

/// `R_ij = p_i·P(x_i + W_1 ∈ cell_j)`.
pub fn reference_endpoint_law(m: &EndpointMarginals) -> Vec<f64> {
    let (n0, n1, d) = (m.q0.len(), m.q1.len(), m.dim());
    let half = m.cell / 2.0;
    let mut r = vec![0.0; n0 * n1];
    for i in 0..n0 {
        for j in 0..n1 {
            let mut p = m.q0.weights()[i];
            for c in 0..d {
                let y = m.q1.point(j)[c] - m.q0.point(i)[c];
                p *= interval_prob(y - half, y + half);
            }
            r[i * n1 + j] = p;
        }
    }
    r
}

/// `KL(π | R)` over the support of `π`; `R` may be sub-stochastic.
pub fn endpoint_kl(pi: &[f64], reference: &[f64]) -> f64 {
    pi.iter()
        .zip(reference)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, r)| if *r > 0.0 { p * libm::log(p / r) } else { f64::INFINITY })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeOptions {
    /// Stop when the summed L¹ marginal error is at most this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_sweeps: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeSolution {
    /// Endpoint coupling `π`, row-major over `(q0 atom, q1 atom)`.
    pub coupling: Vec<f64>,
    pub reference: Vec<f64>,
    /// `ln a_i` with `π = diag(a)·R·diag(b)`; `−∞` on null atoms.
    pub f: Vec<f64>,
    /// `ln b_j`.
    pub g: Vec<f64>,
    /// `H(ν*|μ) = KL(π | R)`.
    pub entropy: f64,
    pub sweeps: usize,
    /// L¹ marginal error (row plus column) after each sweep.
    pub error_history: Vec<f64>,
}

impl BridgeSolution {
    pub fn marginal_error(&self) -> f64 {
        self.error_history.last().copied().unwrap_or(f64::INFINITY)
    }
}

fn marginal_errors(pi: &[f64], p: &[f64], q: &[f64]) -> f64 {
    let n1 = q.len();
    let rows: f64 = p.iter().enumerate().map(|(i, w)| (pi[i * n1..(i + 1) * n1].iter().sum::<f64>() - w).abs()).sum();
    let cols: f64 =
        q.iter().enumerate().map(|(j, w)| ((0..p.len()).map(|i| pi[i * n1 + j]).sum::<f64>() - w).abs()).sum();
    rows + cols
}

/// Iterative proportional fitting of `π = diag(a)·R·diag(b)` to `(q0, q1)`.
pub fn solve_schrodinger_bridge(m: &EndpointMarginals, opts: &BridgeOptions) -> Result<BridgeSolution> {
    let (n0, n1) = (m.q0.len(), m.q1.len());
    let p = m.q0.weights();
    let q = m.q1.weights();
    let r = reference_endpoint_law(m);
    for i in (0..n0).filter(|&i| p[i] > 0.0) {
        if (0..n1).all(|j| q[j] == 0.0 || r[i * n1 + j] == 0.0) {
            return Err(Error::NonConvergence { iterations: 0, residual: f64::INFINITY });
        }
    }
    let mut a = vec![1.0; n0];
    let mut b: Vec<f64> = q.iter().map(|&w| if w > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut pi = vec![0.0; n0 * n1];
    let mut history = Vec::new();
    let mut sweeps = 0;
    loop {
        for i in 0..n0 {
            let s: f64 = (0..n1).map(|j| r[i * n1 + j] * b[j]).sum();
            a[i] = if p[i] > 0.0 { p[i] / s } else { 0.0 };
        }
        for j in 0..n1 {
            let s: f64 = (0..n0).map(|i| r[i * n1 + j] * a[i]).sum();
            b[j] = if q[j] > 0.0 && s > 0.0 { q[j] / s } else { 0.0 };
        }
        for i in 0..n0 {
            for j in 0..n1 {
                pi[i * n1 + j] = a[i] * r[i * n1 + j] * b[j];
            }
        }
        sweeps += 1;
        let err = marginal_errors(&pi, p, q);
        history.push(err);
        if err <= opts.tol {
            break;
        }
        if sweeps >= opts.max_sweeps || !err.is_finite() {
            return Err(Error::NonConvergence { iterations: sweeps, residual: err });
        }
    }
    let ln = |v: &f64| if *v > 0.0 { libm::log(*v) } else { f64::NEG_INFINITY };
    Ok(BridgeSolution {
        entropy: endpoint_kl(&pi, &r),
        coupling: pi,
        reference: r,
        f: a.iter().map(ln).collect(),
        g: b.iter().map(ln).collect(),
        sweeps,
        error_history: history,
    })
}

/// The bridge as a controlled SDE `dX = u(t, X_t; X_0) dt + dW` with
/// `u = ∇ ln h` and `h_i(t, x) = Σ_j (π_ij/R_ij)·P(x + W_{1−t} ∈ cell_j)`.
#[derive(Debug, Clone)]
pub struct BridgeControl<'a> {
    marginals: &'a EndpointMarginals,
    /// `ln(π_ij/R_ij)`; `−∞` where `π_ij = 0`.
    log_ratio: Vec<f64>,
    /// `π_ij/R_ij` scaled by the row maximum.
    scaled_ratio: Vec<f64>,
    /// Distinct cell faces per coordinate, and each cell's `(lower, upper)`
    /// face indices; neighbouring cells share faces.
    faces: Vec<Vec<f64>>,
    cell_faces: Vec<(usize, usize)>,
}

/// Scratch buffers for [`BridgeControl::eval_with`].
#[derive(Debug, Clone, Default)]
pub struct ControlScratch {
    tail: Vec<Vec<f64>>,
    density: Vec<Vec<f64>>,
}

/// Upper tail `P(Z > |z|)`.
fn small_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z.abs() * core::f64::consts::FRAC_1_SQRT_2)
}

/// [`interval_prob`] from cached small tails, with identical rounding.
fn interval_from_tails(a: f64, ta: f64, b: f64, tb: f64) -> f64 {
    if a >= 0.0 {
        ta - tb
    } else if b <= 0.0 {
        tb - ta
    } else {
        1.0 - (f64::min(ta, tb) + f64::max(ta, tb))
    }
}

impl<'a> BridgeControl<'a> {
    pub fn new(marginals: &'a EndpointMarginals, sol: &BridgeSolution) -> Self {
        let (n0, n1, d) = (marginals.q0.len(), marginals.q1.len(), marginals.dim());
        let log_ratio: Vec<f64> = sol
            .coupling
            .iter()
            .zip(&sol.reference)
            .map(|(p, r)| if *p > 0.0 && *r > 0.0 { libm::log(p / r) } else { f64::NEG_INFINITY })
            .collect();
        let mut scaled_ratio = vec![0.0; n0 * n1];
        for i in 0..n0 {
            let row = &log_ratio[i * n1..(i + 1) * n1];
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for j in 0..n1 {
                scaled_ratio[i * n1 + j] = libm::exp(row[j] - top);
            }
        }
        let half = marginals.cell / 2.0;
        let mut faces = vec![Vec::new(); d];
        for (c, list) in faces.iter_mut().enumerate() {
            for j in 0..n1 {
                let y = marginals.q1.point(j)[c];
                list.push(y - half);
                list.push(y + half);
            }
            list.sort_by(f64::total_cmp);
            list.dedup();
        }
        let mut cell_faces = Vec::with_capacity(n1 * d);
        for j in 0..n1 {
            for (c, list) in faces.iter().enumerate() {
                let y = marginals.q1.point(j)[c];
                let find = |v: f64| list.binary_search_by(|f| f.total_cmp(&v)).expect("face registered");
                cell_faces.push((find(y - half), find(y + half)));
            }
        }
        Self { marginals, log_ratio, scaled_ratio, faces, cell_faces }
    }

    /// Writes `u(t, x)` for a path started at atom `start`; `t < 1`.
    pub fn eval(&self, start: usize, t: f64, x: &[f64], out: &mut [f64]) {
        self.eval_with(&mut ControlScratch::default(), start, t, x, out);
    }

    pub fn eval_with(&self, scratch: &mut ControlScratch, start: usize, t: f64, x: &[f64], out: &mut [f64]) {
        let (n1, d) = (self.marginals.q1.len(), self.marginals.dim());
        let sigma = libm::sqrt(1.0 - t);
        let inv_sqrt_2pi = 1.0 / libm::sqrt(2.0 * core::f64::consts::PI);
        scratch.tail.resize(d, Vec::new());
        scratch.density.resize(d, Vec::new());
        for c in 0..d {
            let (tail, density) = (&mut scratch.tail[c], &mut scratch.density[c]);
            tail.clear();
            density.clear();
            for f in &self.faces[c] {
                let z = (f - x[c]) / sigma;
                tail.push(small_tail(z));
                density.push(inv_sqrt_2pi * libm::exp(-0.5 * z * z));
            }
        }
        let ratios = &self.scaled_ratio[start * n1..(start + 1) * n1];
        out.fill(0.0);
        let mut norm = 0.0;
        let mut resolved = true;
        'cells: for j in (0..n1).filter(|&j| ratios[j] > 0.0) {
            let mut prob = ratios[j];
            for c in 0..d {
                let (lo, hi) = self.cell_faces[j * d + c];
                let (zl, zh) = ((self.faces[c][lo] - x[c]) / sigma, (self.faces[c][hi] - x[c]) / sigma);
                let p = interval_from_tails(zl, scratch.tail[c][lo], zh, scratch.tail[c][hi]);
                if !(p > 0.0) {
                    // the cell underflowed; only a log-domain sum can tell whether it matters
                    resolved = false;
                    continue 'cells;
                }
                prob *= p;
            }
            norm += prob;
            for c in 0..d {
                let (lo, hi) = self.cell_faces[j * d + c];
                let zl = (self.faces[c][lo] - x[c]) / sigma;
                let zh = (self.faces[c][hi] - x[c]) / sigma;
                let p = interval_from_tails(zl, scratch.tail[c][lo], zh, scratch.tail[c][hi]);
                out[c] += prob * (scratch.density[c][lo] - scratch.density[c][hi]) / (sigma * p);
            }
        }
        if resolved && norm > 1e-250 && norm.is_finite() {
            out.iter_mut().for_each(|v| *v /= norm);
            if out.iter().all(|v| v.is_finite()) {
                return;
            }
        }
        self.eval_log(start, sigma, x, out);
    }

    /// Law of the terminal cell under the exact bridge transition from
    /// `(t, x)`, as `ln w_j`, together with the expected control energy of
    /// that transition, `Σ w_j ln(g_j / h(t, x))`.
    pub fn terminal_law(&self, start: usize, t: f64, x: &[f64]) -> (Vec<f64>, f64) {
        let n1 = self.marginals.q1.len();
        let sigma = libm::sqrt(1.0 - t);
        let ratios = &self.log_ratio[start * n1..(start + 1) * n1];
        let logs: Vec<f64> = (0..n1).map(|j| self.log_cell(start, j, sigma, x)).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_h = top + libm::log(logs.iter().map(|l| libm::exp(l - top)).sum::<f64>());
        let law: Vec<f64> = logs.iter().map(|l| l - log_h).collect();
        let energy = law
            .iter()
            .zip(ratios)
            .filter(|(l, _)| **l > f64::NEG_INFINITY)
            .map(|(l, r)| libm::exp(*l) * (r - log_h))
            .sum();
        (law, energy)
    }

    /// `ln(g_j·P(x + σZ ∈ cell_j))`.
    fn log_cell(&self, start: usize, j: usize, sigma: f64, x: &[f64]) -> f64 {
        let m = self.marginals;
        let lr = self.log_ratio[start * m.q1.len() + j];
        if lr == f64::NEG_INFINITY {
            return lr;
        }
        let half = m.cell / 2.0;
        lr + (0..m.dim())
            .map(|c| {
                let y = m.q1.point(j)[c];
                log_interval_prob((y - half - x[c]) / sigma, (y + half - x[c]) / sigma)
            })
            .sum::<f64>()
    }

    fn eval_log(&self, start: usize, sigma: f64, x: &[f64], out: &mut [f64]) {
        let m = self.marginals;
        let (n1, d) = (m.q1.len(), m.dim());
        let half = m.cell / 2.0;
        let logs: Vec<f64> = (0..n1).map(|j| self.log_cell(start, j, sigma, x)).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.fill(0.0);
        let mut norm = 0.0;
        for j in (0..n1).filter(|&j| logs[j] > f64::NEG_INFINITY) {
            let w = libm::exp(logs[j] - top);
            norm += w;
            for c in 0..d {
                let y = m.q1.point(j)[c];
                let (lo, hi) = ((y - half - x[c]) / sigma, (y + half - x[c]) / sigma);
                let lp = log_interval_prob(lo, hi);
                // ∂_x ln P(x + σZ ∈ [l, u]) = (φ(lo) − φ(hi)) / (σ·P)
                out[c] += w * (libm::exp(log_phi(lo) - lp) - libm::exp(log_phi(hi) - lp)) / sigma;
            }
        }
        out.iter_mut().for_each(|v| *v /= norm);
    }

    #[cfg(test)]
    fn eval_log_only(&self, start: usize, t: f64, x: &[f64], out: &mut [f64]) {
        self.eval_log(start, libm::sqrt(1.0 - t), x, out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MikamiReport {
    /// `E ∫ ½|u|² dt` along the simulated control.
    pub control_cost: MCEstimate,
    pub entropy: f64,
    /// Total variation between the terminal cell frequencies and `q1`,
    /// with unresolved paths counted as mismatch.
    pub terminal_tv: f64,
    /// Fraction of paths whose terminal cell could not be resolved: outside
    /// every cell under [`TerminalStep::Euler`], numerically unreachable
    /// cells under [`TerminalStep::Exact`].
    pub clipping_rate: f64,
}

/// How the last grid interval is simulated.
///
/// The bridge drift blows up like `1/(1 − t)` near cell faces, and one Euler
/// step of size `dt` leaks `O(√dt)` of the mass out of the cells. `Exact`
/// draws the terminal cell from the exact bridge transition and books the
/// conditional expected energy of that interval instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TerminalStep {
    #[default]
    Exact,
    Euler,
}

fn uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn pick(u: f64, weights: impl Iterator<Item = f64>) -> Option<usize> {
    let mut acc = 0.0;
    let mut last = None;
    for (k, w) in weights.enumerate() {
        if w > 0.0 {
            acc += w;
            last = Some(k);
            if u < acc {
                return Some(k);
            }
        }
    }
    last
}

/// Simulates the bridge control on `model`'s grid and compares its cost with
/// the bridge entropy.
pub fn mikami_value_check(
    model: &GaussianPathModel,
    marginals: &EndpointMarginals,
    sol: &BridgeSolution,
    terminal: TerminalStep,
    seed: u64,
    n: usize,
) -> Result<MikamiReport> {
    if model.dim() != marginals.dim() {
        return Err(invalid("model and marginals have different dimensions"));
    }
    if model.increments() != IncrementModel::Gaussian {
        return Err(invalid("bridge verification uses Gaussian increments"));
    }
    let control = BridgeControl::new(marginals, sol);
    let (steps, d, dt) = (model.steps(), model.dim(), model.dt());
    let euler_steps = match terminal {
        TerminalStep::Exact => steps - 1,
        TerminalStep::Euler => steps,
    };
    let rows = map_items(n, |i| {
        let mut rng = stream(seed, tags::BRIDGE, i);
        let start = pick(uniform(&mut rng), marginals.q0.weights().iter().copied()).unwrap_or(0);
        let mut noise = vec![0.0; steps * d];
        model.draw_increments(&mut rng, &mut noise);
        let mut x = marginals.q0.point(start).to_vec();
        let mut drift = vec![0.0; d];
        let mut scratch = ControlScratch::default();
        let mut cost = 0.0;
        for k in 0..euler_steps {
            control.eval_with(&mut scratch, start, k as f64 * dt, &x, &mut drift);
            cost += 0.5 * drift.iter().map(|v| v * v).sum::<f64>() * dt;
            for c in 0..d {
                x[c] += drift[c] * dt + noise[k * d + c];
            }
        }
        let cell = match terminal {
            TerminalStep::Euler => marginals.cell_of(&x),
            TerminalStep::Exact => {
                let (law, energy) = control.terminal_law(start, euler_steps as f64 * dt, &x);
                if energy.is_finite() {
                    cost += energy;
                    pick(uniform(&mut rng), law.iter().map(|l| libm::exp(*l)))
                } else {
                    None
                }
            }
        };
        (cost, cell)
    });
    let costs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut counts = vec![0usize; marginals.q1.len()];
    let mut outside = 0usize;
    for r in &rows {
        match r.1 {
            Some(j) => counts[j] += 1,
            None => outside += 1,
        }
    }
    let nf = n as f64;
    let tv = 0.5
        * (counts.iter().zip(marginals.q1.weights()).map(|(c, q)| (*c as f64 / nf - q).abs()).sum::<f64>()
            + outside as f64 / nf);
    Ok(MikamiReport {
        control_cost: MCEstimate::from_samples(&costs, seed),
        entropy: sol.entropy,
        terminal_tv: tv,
        clipping_rate: outside as f64 / nf,
    })
}

/// Largest walk enumerated by [`rademacher_bridge_entropy`].
pub const RADEMACHER_BRIDGE_MAX_STEPS: usize = 16;

/// For a simple ±√dt walk of `steps` steps and a target law on its endpoints
/// (index `k` = number of up-steps), returns the path-space entropy of the
/// bridge mixture by full enumeration, and the endpoint `KL(q | R)`.
pub fn rademacher_bridge_entropy(steps: usize, target: &[f64]) -> Result<(f64, f64)> {
    if steps == 0 || steps > RADEMACHER_BRIDGE_MAX_STEPS {
        return Err(Error::SizeGuard(format!("walk length must be in 1..={RADEMACHER_BRIDGE_MAX_STEPS}")));
    }
    if target.len() != steps + 1 || (target.iter().sum::<f64>() - 1.0).abs() > 1e-12 || target.iter().any(|w| *w < 0.0)
    {
        return Err(invalid("target must be a probability vector over the steps+1 endpoints"));
    }
    let total = 1usize << steps;
    let mu = 1.0 / total as f64;
    let mut endpoint = vec![0.0; steps + 1];
    for path in 0..total {
        endpoint[path.count_ones() as usize] += mu;
    }
    let mut path_kl = 0.0;
    for path in 0..total {
        let k = path.count_ones() as usize;
        let nu = mu * target[k] / endpoint[k];
        if nu > 0.0 {
            path_kl += nu * libm::log(nu / mu);
        }
    }
    Ok((path_kl, endpoint_kl(target, &endpoint)))
}
