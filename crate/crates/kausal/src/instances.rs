//! Seeded random instances for the discrete checks.
//!
//! Every instance owns a counter-keyed stream, so instance `i` of a run is the
//! same whatever order or thread evaluates it.

use std::collections::HashMap;
use std::sync::Arc;

use kausal_core::path_space::{Coupling, FilteredPathSpace, PathMeasure};
use kausal_core::rng::stream;
use kausal_core::scalar::{Rational, Scalar};
use kausal_core::transport_solver::CostMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Stream tags above those used by the core library.
pub const TAG_BASE: u64 = 32;

pub fn instance_rng(seed: u64, tag: u64, i: usize) -> ChaCha8Rng {
    stream(seed, TAG_BASE + tag, i)
}

fn r(n: i64, d: i64) -> Rational {
    Rational::from_ratio(n, d)
}

pub fn alphabets(rng: &mut impl Rng, steps: usize, max_symbols: usize, max_paths: usize) -> Vec<usize> {
    loop {
        let a: Vec<usize> = (0..steps).map(|_| rng.random_range(1..=max_symbols)).collect();
        if a.iter().product::<usize>() <= max_paths {
            return a;
        }
    }
}

/// Coordinate filtration, or a random coarsening that still refines in time.
pub fn space(rng: &mut impl Rng, alphabets: &[usize]) -> Arc<FilteredPathSpace> {
    let coord = FilteredPathSpace::coordinate(alphabets).expect("valid alphabets");
    if rng.random_bool(0.5) {
        return Arc::new(coord);
    }
    let n = coord.len();
    let mut labels = Vec::with_capacity(alphabets.len());
    let mut prev = vec![0usize; n];
    for t in 1..=alphabets.len() {
        let bits: Vec<usize> = (0..coord.atom_count(t)).map(|_| rng.random_range(0..2)).collect();
        let discrete = t == alphabets.len() && rng.random_bool(0.5);
        let cur: Vec<usize> =
            (0..n).map(|i| if discrete { i } else { prev[i] * 2 + bits[coord.atom_of(t, i)] }).collect();
        labels.push(cur.clone());
        prev = cur;
    }
    Arc::new(FilteredPathSpace::from_labels(alphabets, labels).expect("refining labels"))
}

/// Rational weights with small integer numerators; zeros allowed when asked.
pub fn weights(rng: &mut impl Rng, n: usize, allow_zero: bool) -> Vec<Rational> {
    let lo = if allow_zero { 0 } else { 1 };
    let mut raw: Vec<i64> = (0..n).map(|_| rng.random_range(lo..=3)).collect();
    if raw.iter().all(|&w| w == 0) {
        raw[rng.random_range(0..n)] = 1;
    }
    let total: i64 = raw.iter().sum();
    raw.iter().map(|&w| r(w, total)).collect()
}

pub fn measure(rng: &mut impl Rng, sp: &Arc<FilteredPathSpace>) -> PathMeasure<Rational> {
    PathMeasure::new(sp.clone(), weights(rng, sp.len(), true)).expect("normalized weights")
}

pub fn random_coupling(
    rng: &mut impl Rng,
    e: &Arc<FilteredPathSpace>,
    s: &Arc<FilteredPathSpace>,
) -> Coupling<Rational> {
    Coupling::new(e.clone(), s.clone(), weights(rng, e.len() * s.len(), true)).expect("normalized weights")
}

/// Conditional laws keyed by (source atom, target prefix).
type Laws = HashMap<(usize, Vec<usize>), Vec<Rational>>;

/// The law of `σ_t` given `σ_{<t}` depends on `ω` only through its time-`t`
/// atom, which makes the coupling causal by construction.
pub fn causal_coupling(
    rng: &mut impl Rng,
    eta: &PathMeasure<Rational>,
    s: &Arc<FilteredPathSpace>,
) -> Coupling<Rational> {
    let e = eta.space();
    let steps = e.steps();
    let alph = s.alphabets().to_vec();
    let mut tables: Vec<Laws> = vec![HashMap::new(); steps];
    let m = s.len();
    let mut w = vec![r(0, 1); e.len() * m];
    for i in 0..e.len() {
        for j in 0..m {
            let path = s.path(j);
            let mut p = eta.weight(i).clone();
            for t in 0..steps {
                let key = (e.atom_of(t + 1, i), path[..t].to_vec());
                let law = tables[t].entry(key).or_insert_with(|| weights(rng, alph[t], true));
                p *= law[path[t]].clone();
            }
            w[i * m + j] = p;
        }
    }
    Coupling::new(e.clone(), s.clone(), w).expect("sequential coupling")
}

/// Integer costs in `0..5`.
pub fn cost(rng: &mut impl Rng, n: usize, m: usize) -> CostMatrix {
    CostMatrix::new(n, m, (0..n * m).map(|_| rng.random_range(0..5) as f64).collect()).expect("finite costs")
}

/// A source measure and a target space with `T ∈ 1..=3`.
pub fn pair(
    rng: &mut impl Rng,
    max_symbols: usize,
    max_paths: usize,
) -> (PathMeasure<Rational>, Arc<FilteredPathSpace>) {
    let steps = rng.random_range(1..=3);
    let ea = alphabets(rng, steps, max_symbols, max_paths);
    let sa = alphabets(rng, steps, max_symbols, max_paths);
    let e = space(rng, &ea);
    let s = space(rng, &sa);
    (measure(rng, &e), s)
}

/// Source `E = {0}×{+,−}` uniform, target `S = {+,−}²` with mass ½ on `(+,+)`
/// and `(−,−)`, cost `1{σ₁ ≠ ω₂}`. A causal plan must pick `σ₁` before seeing
/// `ω₂`, so the causal value is ½ while the classic value is 0.
pub fn anticipation<S: Scalar>() -> (PathMeasure<S>, PathMeasure<S>, CostMatrix) {
    let e = Arc::new(FilteredPathSpace::coordinate(&[1, 2]).expect("valid"));
    let s = Arc::new(FilteredPathSpace::coordinate(&[2, 2]).expect("valid"));
    let eta = PathMeasure::uniform(e.clone());
    let half = S::from_ratio(1, 2);
    let nu = PathMeasure::new(s.clone(), vec![half.clone(), S::zero(), S::zero(), half]).expect("valid");
    let cost = CostMatrix::from_fn(2, 4, |i, j| if s.path(j)[0] != e.path(i)[1] { 1.0 } else { 0.0 }).expect("finite");
    (eta, nu, cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use kausal_core::causality::is_causal;

    #[test]
    fn streams_are_per_instance() {
        let a: Vec<u32> = (0..4).map(|_| instance_rng(42, 1, 7).random()).collect();
        let b: Vec<u32> = (0..4).map(|_| instance_rng(42, 1, 7).random()).collect();
        assert_eq!(a, b);
        assert_ne!(instance_rng(42, 1, 7).random::<u64>(), instance_rng(42, 1, 8).random::<u64>());
    }

    #[test]
    fn sequential_couplings_are_causal() {
        for i in 0..50 {
            let mut rng = instance_rng(1, 0, i);
            let (eta, s) = pair(&mut rng, 3, 27);
            let g = causal_coupling(&mut rng, &eta, &s);
            assert_eq!(g.first_marginal().weights(), eta.weights());
            assert!(is_causal(&g).unwrap().causal);
        }
    }
}
