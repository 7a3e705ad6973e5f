//! Two-phase revised simplex on equality-form programs
//! `min cᵀx  s.t.  Ax = b, x ≥ 0`, generic over [`Scalar`].
//!
//! Pricing is Dantzig's rule; after a run of degenerate pivots it switches to
//! Bland's rule until the objective moves again, which rules out cycling. The
//! basis inverse is dense and updated in product form; float runs refactor it
//! periodically.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LpSolution<S> {
    pub status: LpStatus,
    pub x: Vec<S>,
    /// Equality multipliers, so that `c − Aᵀy ≥ 0` at optimality.
    pub y: Vec<S>,
    pub value: S,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_run: usize,
    pub refactor_every: usize,
    pub pivot_tol: f64,
    pub cost_tol: f64,
    pub feasibility_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200_000,
            degenerate_run: 32,
            refactor_every: 64,
            pivot_tol: 1e-9,
            cost_tol: 1e-11,
            feasibility_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LinearProgram<S> {
    cost: Vec<S>,
    rows: Vec<Vec<(usize, S)>>,
    rhs: Vec<S>,
}

impl<S: Scalar> LinearProgram<S> {
    pub fn new(cost: Vec<S>) -> Self {
        Self { cost, rows: Vec::new(), rhs: Vec::new() }
    }

    pub fn n_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_row(&mut self, terms: Vec<(usize, S)>, rhs: S) {
        self.rows.push(terms);
        self.rhs.push(rhs);
    }

    pub fn solve(&self, opts: &SimplexOptions) -> LpSolution<S> {
        Solver::new(self, opts).run()
    }
}

struct Solver<'a, S> {
    opts: &'a SimplexOptions,
    n: usize,
    m: usize,
    cols: Vec<Vec<(usize, S)>>,
    b: Vec<S>,
    flipped: Vec<bool>,
    cost: &'a [S],
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    binv: Vec<S>,
    xb: Vec<S>,
    iterations: usize,
    since_refactor: usize,
}

enum Phase {
    One,
    Two,
}

enum StepResult {
    Optimal,
    Unbounded,
    Limit,
}

impl<'a, S: Scalar> Solver<'a, S> {
    fn new(lp: &'a LinearProgram<S>, opts: &'a SimplexOptions) -> Self {
        let n = lp.n_vars();
        let m = lp.n_rows();
        let mut cols: Vec<Vec<(usize, S)>> = vec![Vec::new(); n + m];
        let mut b = Vec::with_capacity(m);
        let mut flipped = Vec::with_capacity(m);
        for (i, (row, rhs)) in lp.rows.iter().zip(&lp.rhs).enumerate() {
            let flip = rhs.is_neg_tol(0.0);
            flipped.push(flip);
            b.push(if flip { -rhs.clone() } else { rhs.clone() });
            for (j, v) in row {
                if v.is_zero_tol(0.0) {
                    continue;
                }
                let v = if flip { -v.clone() } else { v.clone() };
                match cols[*j].last_mut() {
                    Some((r, acc)) if *r == i => *acc = acc.clone() + v,
                    _ => cols[*j].push((i, v)),
                }
            }
            cols[n + i].push((i, S::one()));
        }
        let mut binv = vec![S::zero(); m * m];
        for i in 0..m {
            binv[i * m + i] = S::one();
        }
        let mut is_basic = vec![false; n + m];
        for flag in is_basic.iter_mut().skip(n) {
            *flag = true;
        }
        Self {
            opts,
            n,
            m,
            cols,
            xb: b.clone(),
            b,
            flipped,
            cost: &lp.cost,
            basis: (n..n + m).collect(),
            is_basic,
            binv,
            iterations: 0,
            since_refactor: 0,
        }
    }

    fn phase_cost(&self, phase: &Phase, j: usize) -> S {
        match phase {
            Phase::One => {
                if j >= self.n {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Phase::Two => {
                if j >= self.n {
                    S::zero()
                } else {
                    self.cost[j].clone()
                }
            }
        }
    }

    fn duals(&self, phase: &Phase) -> Vec<S> {
        let m = self.m;
        let mut y = vec![S::zero(); m];
        for (i, &bj) in self.basis.iter().enumerate() {
            let cb = self.phase_cost(phase, bj);
            if cb.is_zero_tol(0.0) {
                continue;
            }
            let row = &self.binv[i * m..(i + 1) * m];
            for (yk, bik) in y.iter_mut().zip(row) {
                if !bik.is_zero_tol(0.0) {
                    *yk = yk.clone() + cb.clone() * bik.clone();
                }
            }
        }
        y
    }

    fn reduced_cost(&self, phase: &Phase, y: &[S], j: usize) -> S {
        let mut d = self.phase_cost(phase, j);
        for (k, v) in &self.cols[j] {
            d = d - y[*k].clone() * v.clone();
        }
        d
    }

    fn ftran(&self, j: usize) -> Vec<S> {
        let m = self.m;
        let mut alpha = vec![S::zero(); m];
        for (k, v) in &self.cols[j] {
            for (i, a) in alpha.iter_mut().enumerate() {
                let bik = &self.binv[i * m + k];
                if !bik.is_zero_tol(0.0) {
                    *a = a.clone() + bik.clone() * v.clone();
                }
            }
        }
        alpha
    }

    fn pivot(&mut self, r: usize, j: usize, alpha: &[S]) {
        let m = self.m;
        let piv = alpha[r].clone();
        let theta = self.xb[r].clone() / piv.clone();
        for i in 0..m {
            if i != r && !alpha[i].is_zero_tol(0.0) {
                self.xb[i] = self.xb[i].clone() - theta.clone() * alpha[i].clone();
            }
        }
        self.xb[r] = theta;
        for k in 0..m {
            let v = self.binv[r * m + k].clone();
            if !v.is_zero_tol(0.0) {
                self.binv[r * m + k] = v / piv.clone();
            }
        }
        let pivot_row: Vec<S> = self.binv[r * m..(r + 1) * m].to_vec();
        for i in 0..m {
            if i == r || alpha[i].is_zero_tol(0.0) {
                continue;
            }
            let f = alpha[i].clone();
            for (k, pk) in pivot_row.iter().enumerate() {
                if !pk.is_zero_tol(0.0) {
                    let idx = i * m + k;
                    self.binv[idx] = self.binv[idx].clone() - f.clone() * pk.clone();
                }
            }
        }
        self.is_basic[self.basis[r]] = false;
        self.is_basic[j] = true;
        self.basis[r] = j;
        self.iterations += 1;
        self.since_refactor += 1;
        if !S::EXACT && self.since_refactor >= self.opts.refactor_every {
            self.refactor();
        }
    }

    /// Recomputes the basis inverse and basic values from scratch (float mode).
    fn refactor(&mut self) {
        self.since_refactor = 0;
        let m = self.m;
        let mut a = vec![S::zero(); m * m];
        for (c, &j) in self.basis.iter().enumerate() {
            for (k, v) in &self.cols[j] {
                a[k * m + c] = v.clone();
            }
        }
        if let Some(inv) = invert(a, m) {
            self.binv = inv;
            let mut xb = vec![S::zero(); m];
            for (i, x) in xb.iter_mut().enumerate() {
                for k in 0..m {
                    *x = x.clone() + self.binv[i * m + k].clone() * self.b[k].clone();
                }
            }
            self.xb = xb;
        }
    }

    fn iterate(&mut self, phase: Phase) -> StepResult {
        let opts = self.opts;
        let mut degenerate = 0usize;
        let mut bland = false;
        loop {
            if self.iterations >= opts.max_iterations {
                return StepResult::Limit;
            }
            let y = self.duals(&phase);
            let mut entering: Option<(usize, S)> = None;
            for j in 0..self.n {
                if self.is_basic[j] {
                    continue;
                }
                let d = self.reduced_cost(&phase, &y, j);
                if !d.is_neg_tol(opts.cost_tol) {
                    continue;
                }
                if bland {
                    entering = Some((j, d));
                    break;
                }
                match &entering {
                    Some((_, best)) if d >= *best => {}
                    _ => entering = Some((j, d)),
                }
            }
            let Some((j, _)) = entering else {
                return StepResult::Optimal;
            };
            let alpha = self.ftran(j);
            let mut leave: Option<(usize, S)> = None;
            for i in 0..self.m {
                if !alpha[i].is_pos_tol(opts.pivot_tol) {
                    continue;
                }
                let xi = if self.xb[i].is_neg_tol(0.0) { S::zero() } else { self.xb[i].clone() };
                let ratio = xi / alpha[i].clone();
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        let tie = ratio.approx_eq(&best, opts.pivot_tol * 1e-3);
                        let better = if tie {
                            if bland || S::EXACT {
                                self.basis[i] < self.basis[r]
                            } else {
                                alpha[i].abs_val() > alpha[r].abs_val()
                            }
                        } else {
                            ratio < best
                        };
                        if better {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
            let Some((r, ratio)) = leave else {
                return StepResult::Unbounded;
            };
            if ratio.is_zero_tol(opts.feasibility_tol * 1e-3) {
                degenerate += 1;
                if degenerate >= opts.degenerate_run {
                    bland = true;
                }
            } else {
                degenerate = 0;
                bland = false;
            }
            if self.xb[r].is_neg_tol(0.0) {
                self.xb[r] = S::zero();
            }
            self.pivot(r, j, &alpha);
        }
    }

    /// Pivots zero-level artificials out of the basis where an original column allows it.
    fn drive_out_artificials(&mut self) {
        let m = self.m;
        for r in 0..m {
            if self.basis[r] < self.n {
                continue;
            }
            let mut best: Option<(usize, S)> = None;
            for j in 0..self.n {
                if self.is_basic[j] {
                    continue;
                }
                let mut rho = S::zero();
                for (k, v) in &self.cols[j] {
                    let bik = &self.binv[r * m + k];
                    if !bik.is_zero_tol(0.0) {
                        rho = rho + bik.clone() * v.clone();
                    }
                }
                if rho.is_zero_tol(self.opts.pivot_tol) {
                    continue;
                }
                let mag = rho.abs_val();
                match &best {
                    Some((_, b)) if S::EXACT || mag <= *b => {}
                    _ => best = Some((j, mag)),
                }
                if S::EXACT {
                    break;
                }
            }
            if let Some((j, _)) = best {
                let alpha = self.ftran(j);
                self.xb[r] = S::zero();
                self.pivot(r, j, &alpha);
            }
        }
    }

    fn run(mut self) -> LpSolution<S> {
        let n = self.n;
        let m = self.m;
        let empty = |status, iterations| LpSolution {
            status,
            x: vec![S::zero(); n],
            y: vec![S::zero(); m],
            value: S::zero(),
            iterations,
        };
        match self.iterate(Phase::One) {
            StepResult::Optimal => {}
            StepResult::Limit => return empty(LpStatus::IterationLimit, self.iterations),
            StepResult::Unbounded => return empty(LpStatus::Infeasible, self.iterations),
        }
        if !S::EXACT {
            self.refactor();
        }
        let infeasibility =
            self.basis.iter().zip(&self.xb).filter(|(&j, _)| j >= n).fold(S::zero(), |acc, (_, x)| acc + x.abs_val());
        let scale = 1.0 + self.b.iter().map(|v| v.to_f64().abs()).sum::<f64>();
        if infeasibility.is_pos_tol(self.opts.feasibility_tol * scale) {
            return empty(LpStatus::Infeasible, self.iterations);
        }
        self.drive_out_artificials();
        let status = match self.iterate(Phase::Two) {
            StepResult::Optimal => LpStatus::Optimal,
            StepResult::Unbounded => LpStatus::Unbounded,
            StepResult::Limit => LpStatus::IterationLimit,
        };
        if !S::EXACT {
            self.refactor();
        }
        let mut x = vec![S::zero(); n];
        for (i, &j) in self.basis.iter().enumerate() {
            if j < n {
                x[j] = if self.xb[i].is_neg_tol(0.0) { S::zero() } else { self.xb[i].clone() };
            }
        }
        let mut y = self.duals(&Phase::Two);
        for (yi, &f) in y.iter_mut().zip(&self.flipped) {
            if f {
                *yi = -yi.clone();
            }
        }
        let value = x.iter().zip(self.cost).fold(S::zero(), |acc, (xj, cj)| acc + xj.clone() * cj.clone());
        LpSolution { status, x, y, value, iterations: self.iterations }
    }
}

/// Gauss–Jordan inverse with partial pivoting; `None` when singular.
fn invert<S: Scalar>(mut a: Vec<S>, m: usize) -> Option<Vec<S>> {
    let mut inv = vec![S::zero(); m * m];
    for i in 0..m {
        inv[i * m + i] = S::one();
    }
    for c in 0..m {
        let p = (c..m).max_by(|&x, &y| {
            a[x * m + c].abs_val().partial_cmp(&a[y * m + c].abs_val()).unwrap_or(core::cmp::Ordering::Equal)
        })?;
        if a[p * m + c].is_zero_tol(1e-14) {
            return None;
        }
        if p != c {
            for k in 0..m {
                a.swap(p * m + k, c * m + k);
                inv.swap(p * m + k, c * m + k);
            }
        }
        let piv = a[c * m + c].clone();
        for k in 0..m {
            a[c * m + k] = a[c * m + k].clone() / piv.clone();
            inv[c * m + k] = inv[c * m + k].clone() / piv.clone();
        }
        for r in 0..m {
            if r == c {
                continue;
            }
            let f = a[r * m + c].clone();
            if f.is_zero_tol(0.0) {
                continue;
            }
            for k in 0..m {
                a[r * m + k] = a[r * m + k].clone() - f.clone() * a[c * m + k].clone();
                inv[r * m + k] = inv[r * m + k].clone() - f.clone() * inv[c * m + k].clone();
            }
        }
    }
    Some(inv)
}
