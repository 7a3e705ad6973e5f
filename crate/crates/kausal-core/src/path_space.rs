//! Finite filtered path spaces, measures and couplings on them, and exact
//! conditional kernels.
//!
//! Paths are sequences of `T` symbol indices, one per step, listed in
//! lexicographic order. A filtration is stored as one atom label per path and
//! per time `t = 1..=T`; labels are numbered in order of first appearance.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Mass tolerance for float-mode measures.
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilteredPathSpace {
    alphabets: Vec<usize>,
    paths: Vec<Vec<usize>>,
    labels: Vec<Vec<usize>>,
    counts: Vec<usize>,
}

fn enumerate_paths(alphabets: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &k in alphabets {
        let mut next = Vec::with_capacity(out.len() * k);
        for prefix in &out {
            for s in 0..k {
                let mut p = prefix.clone();
                p.push(s);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

fn relabel(raw: &[usize]) -> (Vec<usize>, usize) {
    let mut map = alloc::collections::BTreeMap::new();
    let mut out = Vec::with_capacity(raw.len());
    for &r in raw {
        let next = map.len();
        out.push(*map.entry(r).or_insert(next));
    }
    (out, map.len())
}

impl FilteredPathSpace {
    fn check_alphabets(alphabets: &[usize]) -> Result<()> {
        if alphabets.is_empty() {
            return Err(invalid("steps must be positive"));
        }
        if alphabets.iter().any(|&k| k == 0) {
            return Err(invalid("alphabets must be nonempty"));
        }
        let total = alphabets
            .iter()
            .try_fold(1usize, |acc, &k| acc.checked_mul(k))
            .ok_or_else(|| invalid("path count overflows"))?;
        if total > 1 << 20 {
            return Err(invalid(format!("{total} paths exceeds the supported size")));
        }
        Ok(())
    }

    /// Coordinate filtration: atoms at time `t` group paths sharing their first `t` symbols.
    pub fn coordinate(alphabets: &[usize]) -> Result<Self> {
        Self::check_alphabets(alphabets)?;
        let paths = enumerate_paths(alphabets);
        let mut labels = Vec::with_capacity(alphabets.len());
        let mut counts = Vec::with_capacity(alphabets.len());
        for t in 1..=alphabets.len() {
            // lexicographic order makes the prefix index a quotient
            let stride: usize = alphabets[t..].iter().product();
            labels.push((0..paths.len()).map(|i| i / stride).collect());
            counts.push(paths.len() / stride);
        }
        Ok(Self { alphabets: alphabets.to_vec(), paths, labels, counts })
    }

    /// Every time carries the discrete partition (the full Borel field).
    pub fn degenerate(alphabets: &[usize]) -> Result<Self> {
        Self::check_alphabets(alphabets)?;
        let paths = enumerate_paths(alphabets);
        let n = paths.len();
        let t = alphabets.len();
        Self::from_labels(alphabets, vec![(0..n).collect(); t])
    }

    /// A single atom before `T` and the discrete partition at `T`.
    pub fn trivial_until_end(alphabets: &[usize]) -> Result<Self> {
        Self::check_alphabets(alphabets)?;
        let n: usize = alphabets.iter().product();
        let t = alphabets.len();
        let mut labels = vec![vec![0; n]; t];
        labels[t - 1] = (0..n).collect();
        Self::from_labels(alphabets, labels)
    }

    /// Builds a space from explicit partitions, one list of atoms per time.
    pub fn with_partitions(alphabets: &[usize], partitions: &[Vec<Vec<usize>>]) -> Result<Self> {
        Self::check_alphabets(alphabets)?;
        let n: usize = alphabets.iter().product();
        if partitions.len() != alphabets.len() {
            return Err(invalid(format!(
                "filtration has {} partitions, expected {}",
                partitions.len(),
                alphabets.len()
            )));
        }
        let mut labels = Vec::with_capacity(partitions.len());
        for (t, atoms) in partitions.iter().enumerate() {
            let mut lab = vec![usize::MAX; n];
            for (a, atom) in atoms.iter().enumerate() {
                if atom.is_empty() {
                    return Err(invalid(format!("empty atom at time {}", t + 1)));
                }
                for &p in atom {
                    if p >= n {
                        return Err(invalid(format!("atom member {p} out of range at time {}", t + 1)));
                    }
                    if lab[p] != usize::MAX {
                        return Err(invalid(format!("path {p} in two atoms at time {}", t + 1)));
                    }
                    lab[p] = a;
                }
            }
            if let Some(p) = lab.iter().position(|&l| l == usize::MAX) {
                return Err(invalid(format!("path {p} not covered at time {}", t + 1)));
            }
            labels.push(lab);
        }
        Self::from_labels(alphabets, labels)
    }

    /// Builds a space from per-time atom labels (arbitrary integers).
    pub fn from_labels(alphabets: &[usize], raw: Vec<Vec<usize>>) -> Result<Self> {
        Self::check_alphabets(alphabets)?;
        let paths = enumerate_paths(alphabets);
        if raw.len() != alphabets.len() || raw.iter().any(|l| l.len() != paths.len()) {
            return Err(invalid("label table does not match the path set"));
        }
        let mut labels = Vec::with_capacity(raw.len());
        let mut counts = Vec::with_capacity(raw.len());
        for r in &raw {
            let (l, c) = relabel(r);
            labels.push(l);
            counts.push(c);
        }
        for t in 1..labels.len() {
            // refinement: paths sharing an atom at t+1 share an atom at t
            let mut parent = vec![usize::MAX; counts[t]];
            for p in 0..paths.len() {
                let child = labels[t][p];
                let up = labels[t - 1][p];
                if parent[child] == usize::MAX {
                    parent[child] = up;
                } else if parent[child] != up {
                    return Err(invalid(format!("partition at time {} does not refine time {}", t + 1, t)));
                }
            }
        }
        Ok(Self { alphabets: alphabets.to_vec(), paths, labels, counts })
    }

    pub fn steps(&self) -> usize {
        self.alphabets.len()
    }

    pub fn alphabets(&self) -> &[usize] {
        &self.alphabets
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn path(&self, i: usize) -> &[usize] {
        &self.paths[i]
    }

    pub fn paths(&self) -> &[Vec<usize>] {
        &self.paths
    }

    pub fn index_of(&self, path: &[usize]) -> Option<usize> {
        if path.len() != self.steps() {
            return None;
        }
        let mut idx = 0usize;
        for (&s, &k) in path.iter().zip(&self.alphabets) {
            if s >= k {
                return None;
            }
            idx = idx * k + s;
        }
        Some(idx)
    }

    /// Atom label of path `i` at time `t` (1-based).
    pub fn atom_of(&self, t: usize, i: usize) -> usize {
        self.labels[t - 1][i]
    }

    pub fn atom_count(&self, t: usize) -> usize {
        self.counts[t - 1]
    }

    /// Atoms at time `t` as sorted member lists.
    pub fn atoms(&self, t: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.counts[t - 1]];
        for (p, &a) in self.labels[t - 1].iter().enumerate() {
            out[a].push(p);
        }
        out
    }

    pub fn is_discrete_at(&self, t: usize) -> bool {
        self.counts[t - 1] == self.len()
    }

    pub fn is_coordinate(&self) -> bool {
        match Self::coordinate(&self.alphabets) {
            Ok(c) => c.labels == self.labels,
            Err(_) => false,
        }
    }
}

/// Probability vector over the paths of a space.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMeasure<S> {
    space: Arc<FilteredPathSpace>,
    weights: Vec<S>,
}

fn check_mass<S: Scalar>(weights: &[S], what: &str) -> Result<()> {
    if let Some(i) = weights.iter().position(|w| w.is_neg_tol(0.0)) {
        return Err(invalid(format!("{what} weight {i} is negative")));
    }
    if weights.iter().any(|w| !w.to_f64().is_finite()) {
        return Err(invalid(format!("{what} weights must be finite")));
    }
    let total = S::sum(weights);
    if !total.approx_eq(&S::one(), MASS_TOL) {
        return Err(invalid(format!("{what} weights sum to {}, not 1", total.to_f64())));
    }
    Ok(())
}

impl<S: Scalar> PathMeasure<S> {
    pub fn new(space: Arc<FilteredPathSpace>, weights: Vec<S>) -> Result<Self> {
        if weights.len() != space.len() {
            return Err(invalid(format!("measure has {} weights for {} paths", weights.len(), space.len())));
        }
        check_mass(&weights, "measure")?;
        Ok(Self { space, weights })
    }

    pub fn uniform(space: Arc<FilteredPathSpace>) -> Self {
        let n = space.len() as i64;
        let weights = vec![S::from_ratio(1, n); space.len()];
        Self { space, weights }
    }

    pub fn dirac(space: Arc<FilteredPathSpace>, at: usize) -> Self {
        let mut weights = vec![S::zero(); space.len()];
        weights[at] = S::one();
        Self { space, weights }
    }

    pub fn space(&self) -> &Arc<FilteredPathSpace> {
        &self.space
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> &S {
        &self.weights[i]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_positive(&self, i: usize) -> bool {
        self.weights[i].is_pos_tol(0.0)
    }

    /// Indices of paths with positive mass.
    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_positive(i)).collect()
    }

    /// Smallest positive weight, as `f64`.
    pub fn min_positive(&self) -> f64 {
        self.weights.iter().map(|w| w.to_f64()).filter(|&w| w > 0.0).fold(f64::INFINITY, f64::min)
    }

    pub fn to_f64(&self) -> PathMeasure<f64> {
        PathMeasure { space: self.space.clone(), weights: self.weights.iter().map(|w| w.to_f64()).collect() }
    }

    /// `λ·self + (1−λ)·other` on the same space.
    pub fn mix(&self, lambda: &S, other: &Self) -> Result<Self> {
        if self.space != other.space {
            return Err(invalid("mixture of measures on different spaces"));
        }
        let mu = S::one() - lambda.clone();
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| lambda.clone() * a.clone() + mu.clone() * b.clone())
            .collect();
        Self::new(self.space.clone(), weights)
    }
}

/// Transference plan between a measure on `first` and one on `second`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling<S> {
    first: Arc<FilteredPathSpace>,
    second: Arc<FilteredPathSpace>,
    weights: Vec<S>,
}

impl<S: Scalar> Coupling<S> {
    /// `weights` is row-major: `weights[i * second.len() + j]`.
    pub fn new(first: Arc<FilteredPathSpace>, second: Arc<FilteredPathSpace>, weights: Vec<S>) -> Result<Self> {
        if weights.len() != first.len() * second.len() {
            return Err(invalid(format!(
                "coupling has {} entries, expected {}x{}",
                weights.len(),
                first.len(),
                second.len()
            )));
        }
        check_mass(&weights, "coupling")?;
        Ok(Self { first, second, weights })
    }

    pub(crate) fn from_parts_unchecked(
        first: Arc<FilteredPathSpace>,
        second: Arc<FilteredPathSpace>,
        weights: Vec<S>,
    ) -> Self {
        Self { first, second, weights }
    }

    pub fn first_space(&self) -> &Arc<FilteredPathSpace> {
        &self.first
    }

    pub fn second_space(&self) -> &Arc<FilteredPathSpace> {
        &self.second
    }

    pub fn rows(&self) -> usize {
        self.first.len()
    }

    pub fn cols(&self) -> usize {
        self.second.len()
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn get(&self, i: usize, j: usize) -> &S {
        &self.weights[i * self.second.len() + j]
    }

    pub fn row(&self, i: usize) -> &[S] {
        let m = self.second.len();
        &self.weights[i * m..(i + 1) * m]
    }

    /// `γ({i} × A)` for a set of second-space paths.
    pub fn row_mass(&self, i: usize, set: &[usize]) -> S {
        let row = self.row(i);
        set.iter().fold(S::zero(), |acc, &j| acc + row[j].clone())
    }

    pub fn first_marginal(&self) -> PathMeasure<S> {
        let weights = (0..self.rows()).map(|i| S::sum(self.row(i))).collect();
        PathMeasure { space: self.first.clone(), weights }
    }

    pub fn second_marginal(&self) -> PathMeasure<S> {
        let m = self.cols();
        let mut weights = vec![S::zero(); m];
        for i in 0..self.rows() {
            for (j, w) in self.row(i).iter().enumerate() {
                weights[j] = weights[j].clone() + w.clone();
            }
        }
        PathMeasure { space: self.second.clone(), weights }
    }

    pub fn to_f64(&self) -> Coupling<f64> {
        Coupling {
            first: self.first.clone(),
            second: self.second.clone(),
            weights: self.weights.iter().map(|w| w.to_f64()).collect(),
        }
    }

    /// `λ·self + (1−λ)·other`.
    pub fn mix(&self, lambda: &S, other: &Self) -> Result<Self> {
        if self.first != other.first || self.second != other.second {
            return Err(invalid("mixture of couplings on different spaces"));
        }
        let mu = S::one() - lambda.clone();
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| lambda.clone() * a.clone() + mu.clone() * b.clone())
            .collect();
        Self::new(self.first.clone(), self.second.clone(), weights)
    }
}

/// Returns `(π∗γ, π̃∗γ)`.
pub fn marginals<S: Scalar>(gamma: &Coupling<S>) -> (PathMeasure<S>, PathMeasure<S>) {
    (gamma.first_marginal(), gamma.second_marginal())
}

/// Disintegration of a coupling against its first marginal.
///
/// Rows exist only for paths of positive first-marginal mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalKernel<S> {
    second: Arc<FilteredPathSpace>,
    rows: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> ConditionalKernel<S> {
    pub fn row(&self, omega: usize) -> Result<&[S]> {
        match self.rows.get(omega) {
            Some(Some(r)) => Ok(r),
            Some(None) => Err(Error::NullAtom(omega)),
            None => Err(invalid(format!("path {omega} out of range"))),
        }
    }

    pub fn is_defined(&self, omega: usize) -> bool {
        matches!(self.rows.get(omega), Some(Some(_)))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `Θ^ω(B)` for a set of second-space paths.
    pub fn value(&self, omega: usize, set: &[usize]) -> Result<S> {
        let row = self.row(omega)?;
        Ok(set.iter().fold(S::zero(), |acc, &j| acc + row[j].clone()))
    }

    /// Rebuilds `γ(ω, σ) = η(ω) Θ^ω(σ)`.
    pub fn reconstruct(&self, eta: &PathMeasure<S>) -> Result<Coupling<S>> {
        if eta.len() != self.rows.len() {
            return Err(invalid("kernel and measure sizes differ"));
        }
        let m = self.second.len();
        let mut weights = Vec::with_capacity(eta.len() * m);
        for (i, row) in self.rows.iter().enumerate() {
            match row {
                Some(r) => weights.extend(r.iter().map(|k| eta.weight(i).clone() * k.clone())),
                None if eta.is_positive(i) => return Err(Error::NullAtom(i)),
                None => weights.extend(core::iter::repeat_n(S::zero(), m)),
            }
        }
        Coupling::new(eta.space().clone(), self.second.clone(), weights)
    }
}

pub fn conditional_kernel<S: Scalar>(gamma: &Coupling<S>) -> ConditionalKernel<S> {
    let eta = gamma.first_marginal();
    let rows = (0..gamma.rows())
        .map(|i| {
            if eta.is_positive(i) {
                let mass = eta.weight(i).clone();
                Some(gamma.row(i).iter().map(|w| w.clone() / mass.clone()).collect())
            } else {
                None
            }
        })
        .collect();
    ConditionalKernel { second: gamma.second.clone(), rows }
}

pub fn product_coupling<S: Scalar>(eta: &PathMeasure<S>, nu: &PathMeasure<S>) -> Coupling<S> {
    let mut weights = Vec::with_capacity(eta.len() * nu.len());
    for a in eta.weights() {
        for b in nu.weights() {
            weights.push(a.clone() * b.clone());
        }
    }
    Coupling { first: eta.space().clone(), second: nu.space().clone(), weights }
}

/// `(I × U)∗η` for a map given as target path indices.
pub fn graph_coupling<S: Scalar>(
    map: &[usize],
    eta: &PathMeasure<S>,
    second: &Arc<FilteredPathSpace>,
) -> Result<Coupling<S>> {
    if map.len() != eta.len() {
        return Err(invalid("map length differs from the first path set"));
    }
    let m = second.len();
    let mut weights = vec![S::zero(); eta.len() * m];
    for (i, &target) in map.iter().enumerate() {
        if !eta.is_positive(i) {
            continue;
        }
        if target >= m {
            return Err(Error::Range { path: i, target });
        }
        weights[i * m + target] = eta.weight(i).clone();
    }
    Ok(Coupling { first: eta.space().clone(), second: second.clone(), weights })
}

/// Pushforward `U∗η`.
pub fn pushforward<S: Scalar>(
    map: &[usize],
    eta: &PathMeasure<S>,
    second: &Arc<FilteredPathSpace>,
) -> Result<PathMeasure<S>> {
    Ok(graph_coupling(map, eta, second)?.second_marginal())
}

/// True when `U^{-1}(A)` is, up to `η`-null paths, a union of atoms of `E` at
/// every time for every atom `A` of `S`.
pub fn is_adapted_map<S: Scalar>(
    map: &[usize],
    first: &FilteredPathSpace,
    second: &FilteredPathSpace,
    eta: &PathMeasure<S>,
) -> Result<bool> {
    if first.steps() != second.steps() {
        return Err(invalid("spaces have different numbers of steps"));
    }
    if map.len() != first.len() || eta.len() != first.len() {
        return Err(invalid("map or measure does not match the first space"));
    }
    for (i, &target) in map.iter().enumerate() {
        if eta.is_positive(i) && target >= second.len() {
            return Err(Error::Range { path: i, target });
        }
    }
    for t in 1..=first.steps() {
        let mut seen: Vec<Option<usize>> = vec![None; first.atom_count(t)];
        for (i, &target) in map.iter().enumerate() {
            if !eta.is_positive(i) {
                continue;
            }
            let e_atom = first.atom_of(t, i);
            let s_atom = second.atom_of(t, target);
            match seen[e_atom] {
                None => seen[e_atom] = Some(s_atom),
                Some(prev) if prev != s_atom => return Ok(false),
                Some(_) => {}
            }
        }
    }
    Ok(true)
}
