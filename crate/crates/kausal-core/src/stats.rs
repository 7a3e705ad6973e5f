//! Monte Carlo estimates, a normality test and streaming least squares.

use alloc::vec;
use alloc::vec::Vec;

/// Mean with its standard error `sd/√n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MCEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl MCEstimate {
    /// Sequential two-pass mean and variance, so equal inputs give equal bits.
    pub fn from_samples(values: &[f64], seed: u64) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { value: f64::NAN, standard_error: f64::NAN, n_samples: 0, seed };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            libm::sqrt(var / n as f64)
        } else {
            0.0
        };
        Self { value: mean, standard_error: se, n_samples: n, seed }
    }

    pub fn exact(value: f64, n_samples: usize, seed: u64) -> Self {
        Self { value, standard_error: 0.0, n_samples, seed }
    }

    pub fn scaled(self, c: f64) -> Self {
        Self { value: c * self.value, standard_error: c.abs() * self.standard_error, ..self }
    }
}

/// Absolute slack added to every `k·SE` comparison; it only absorbs
/// summation rounding when the standard error is exactly zero.
pub const ROUNDING_FLOOR: f64 = 1e-9;

/// `|estimate − oracle| ≤ k·se + ROUNDING_FLOOR`.
pub fn within_se(estimate: f64, oracle: f64, se: f64, k: f64) -> bool {
    (estimate - oracle).abs() <= k * se + ROUNDING_FLOOR
}

/// Standard error of the difference of two independent estimates.
pub fn joint_se(a: &MCEstimate, b: &MCEstimate) -> f64 {
    libm::hypot(a.standard_error, b.standard_error)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Kolmogorov–Smirnov distance of a sample from `N(0,1)`.
pub fn ks_statistic_normal(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            f64::max(f - i as f64 / n, (i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the KS statistic `d` for `n` samples
/// (Stephens' finite-sample correction).
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = libm::sqrt(n as f64);
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = libm::exp(-2.0 * (j * j) as f64 * lambda * lambda);
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Streaming normal equations for `q` responses on `p` shared features.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquares {
    p: usize,
    q: usize,
    n: usize,
    xtx: Vec<f64>,
    xty: Vec<f64>,
    yty: Vec<f64>,
}

/// Coefficients of one response; dropped features get 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub coef: Vec<f64>,
    pub rank: usize,
    /// Ratio of the largest to the smallest accepted Cholesky pivot of the
    /// scaled Gram matrix; an estimate of its 2-norm condition number.
    pub condition: f64,
}

/// Solves `A x = b` for a symmetric positive semidefinite `p×p` matrix `A`
/// (row-major). Directions whose pivot falls below `rel_tol` times the
/// largest diagonal are dropped and get 0.
pub(crate) fn pivoted_cholesky_solve(mut a: Vec<f64>, mut rhs: Vec<f64>, p: usize, rel_tol: f64) -> Fit {
    let mut perm: Vec<usize> = (0..p).collect();
    let max_diag = (0..p).map(|i| a[i * p + i]).fold(0.0, f64::max);
    let mut rank = 0;
    let mut pivots = Vec::new();
    for k in 0..p {
        let (best, val) =
            (k..p).map(|i| (i, a[i * p + i])).fold((k, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
        if !(val > rel_tol * max_diag) || val <= 0.0 {
            break;
        }
        if best != k {
            for c in 0..p {
                a.swap(k * p + c, best * p + c);
            }
            for r in 0..p {
                a.swap(r * p + k, r * p + best);
            }
            rhs.swap(k, best);
            perm.swap(k, best);
        }
        let l = libm::sqrt(a[k * p + k]);
        pivots.push(a[k * p + k]);
        a[k * p + k] = l;
        for i in k + 1..p {
            a[i * p + k] /= l;
        }
        // keep the trailing block symmetric: later pivots swap rows and columns
        for i in k + 1..p {
            for j in k + 1..=i {
                a[i * p + j] -= a[i * p + k] * a[j * p + k];
                a[j * p + i] = a[i * p + j];
            }
        }
        rank += 1;
    }
    // forward then backward substitution on the leading rank×rank block
    let mut z = vec![0.0; rank];
    for i in 0..rank {
        let s: f64 = (0..i).map(|j| a[i * p + j] * z[j]).sum();
        z[i] = (rhs[i] - s) / a[i * p + i];
    }
    let mut w = vec![0.0; rank];
    for i in (0..rank).rev() {
        let s: f64 = (i + 1..rank).map(|j| a[j * p + i] * w[j]).sum();
        w[i] = (z[i] - s) / a[i * p + i];
    }
    let mut coef = vec![0.0; p];
    for i in 0..rank {
        coef[perm[i]] = w[i];
    }
    let condition = match (pivots.first(), pivots.last()) {
        (Some(hi), Some(lo)) => hi / lo,
        _ => f64::INFINITY,
    };
    Fit { coef, rank, condition }
}

impl LeastSquares {
    pub fn new(p: usize, q: usize) -> Self {
        Self { p, q, n: 0, xtx: vec![0.0; p * p], xty: vec![0.0; p * q], yty: vec![0.0; q * q] }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn add(&mut self, x: &[f64], y: &[f64]) {
        debug_assert!(x.len() == self.p && y.len() == self.q);
        self.n += 1;
        for a in 0..self.p {
            for b in 0..self.p {
                self.xtx[a * self.p + b] += x[a] * x[b];
            }
            for r in 0..self.q {
                self.xty[a * self.q + r] += x[a] * y[r];
            }
        }
        for r in 0..self.q {
            for s in 0..self.q {
                self.yty[r * self.q + s] += y[r] * y[s];
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.n += other.n;
        self.xtx.iter_mut().zip(&other.xtx).for_each(|(a, b)| *a += b);
        self.xty.iter_mut().zip(&other.xty).for_each(|(a, b)| *a += b);
        self.yty.iter_mut().zip(&other.yty).for_each(|(a, b)| *a += b);
    }

    /// Pivoted Cholesky solve; features whose pivot falls below `1e-12` of
    /// the largest diagonal are dropped.
    pub fn solve(&self, response: usize) -> Fit {
        let rhs: Vec<f64> = (0..self.p).map(|i| self.xty[i * self.q + response]).collect();
        pivoted_cholesky_solve(self.xtx.clone(), rhs, self.p, 1e-12)
    }

    fn quad(&self, c: &[f64]) -> f64 {
        let p = self.p;
        (0..p).map(|a| (0..p).map(|b| c[a] * self.xtx[a * p + b] * c[b]).sum::<f64>()).sum()
    }

    fn cross(&self, c: &[f64], response: usize) -> f64 {
        (0..self.p).map(|a| c[a] * self.xty[a * self.q + response]).sum()
    }

    /// Mean square of the fitted values `(Xβ)_i`.
    pub fn fitted_mean_square(&self, fit: &Fit) -> f64 {
        (self.quad(&fit.coef) / self.n as f64).max(0.0)
    }

    /// Unbiased residual variance of `response` about the fit.
    pub fn residual_variance(&self, fit: &Fit, response: usize) -> f64 {
        let rss = self.yty[response * self.q + response] - 2.0 * self.cross(&fit.coef, response) + self.quad(&fit.coef);
        let dof = self.n.saturating_sub(fit.rank).max(1);
        rss.max(0.0) / dof as f64
    }

    /// `Σ (Xβ − y_s)²` against another response column.
    pub fn squared_error_against(&self, fit: &Fit, response: usize) -> f64 {
        (self.quad(&fit.coef) - 2.0 * self.cross(&fit.coef, response) + self.yty[response * self.q + response]).max(0.0)
    }

    pub fn response_square_sum(&self, response: usize) -> f64 {
        self.yty[response * self.q + response]
    }
}
