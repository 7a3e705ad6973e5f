//! Schrödinger bridge solver against quadrature and brute-force oracles.

use kausal_core::bridge::{
    endpoint_kl, mikami_value_check, reference_endpoint_law, solve_schrodinger_bridge, BridgeOptions,
    EndpointMarginals, GridMeasure, TerminalStep,
};
use kausal_core::gaussian_lab::{GaussianPathModel, IncrementModel};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// `P(a < Z < b)` by composite Simpson quadrature of the density.
fn simpson_interval(a: f64, b: f64) -> f64 {
    let (a, b) = (a.max(-12.0), b.min(12.0));
    if b <= a {
        return 0.0;
    }
    let n = 4000;
    let h = (b - a) / n as f64;
    let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = phi(a) + phi(b);
    for i in 1..n {
        s += phi(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn kl(pi: &[f64], r: &[f64]) -> f64 {
    pi.iter().zip(r).filter(|(p, _)| **p > 0.0).map(|(p, r)| p * (p / r).ln()).sum()
}

#[test]
fn reference_law_matches_quadrature() {
    let q0 = GridMeasure::new(1, vec![-0.5, 0.5], vec![0.4, 0.6]).unwrap();
    let q1 = GridMeasure::new(1, vec![-1.0, 0.0, 1.0], vec![0.2, 0.5, 0.3]).unwrap();
    let m = EndpointMarginals::new(q0, q1, None).unwrap();
    let r = reference_endpoint_law(&m);
    for (i, x) in [(0, -0.5), (1, 0.5)] {
        for (j, y) in [(0, -1.0), (1, 0.0), (2, 1.0)] {
            let oracle = [0.4, 0.6][i] * simpson_interval(y - 0.5 - x, y + 0.5 - x);
            assert!((r[i * 3 + j] - oracle).abs() < 1e-12);
        }
    }
}

#[test]
fn pinned_endpoint_entropy_is_log_cell_probability() {
    for cell in [0.25, 1.0] {
        let m = EndpointMarginals::from_origin(GridMeasure::dirac(vec![1.0]).unwrap(), Some(cell)).unwrap();
        let sol = solve_schrodinger_bridge(&m, &BridgeOptions::default()).unwrap();
        let oracle = -simpson_interval(1.0 - cell / 2.0, 1.0 + cell / 2.0).ln();
        assert!((sol.entropy - oracle).abs() < 1e-10);
        assert_eq!(sol.coupling, vec![1.0]);
    }
}

#[test]
fn two_point_target_matches_brute_force() {
    // δ_0 to ½δ_{−1} + ½δ_{+1}: the coupling is forced and the entropy is closed form
    let q1 = GridMeasure::new(1, vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
    let m = EndpointMarginals::from_origin(q1, None).unwrap();
    let sol = solve_schrodinger_bridge(&m, &BridgeOptions::default()).unwrap();
    let half = simpson_interval(0.0, 2.0);
    assert!((sol.entropy - (0.5f64 / half).ln()).abs() < 1e-10);
    assert_eq!(sol.g[0], sol.g[1]);

    // two starting atoms: one free parameter t, π = [[t, 0.4 − t], [0.5 − t, 0.1 + t]]
    let q0 = GridMeasure::new(1, vec![-0.5, 0.5], vec![0.4, 0.6]).unwrap();
    let q1 = GridMeasure::new(1, vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap();
    let m = EndpointMarginals::new(q0, q1, None).unwrap();
    let sol = solve_schrodinger_bridge(&m, &BridgeOptions::default()).unwrap();
    let r: Vec<f64> = [(-0.5, 0.4), (0.5, 0.6)]
        .iter()
        .flat_map(|&(x, p)| [(-2.0, 0.0), (0.0, 2.0)].map(|(lo, hi)| p * simpson_interval(lo - x, hi - x)))
        .collect();
    let f = |t: f64| kl(&[t, 0.4 - t, 0.5 - t, 0.1 + t], &r);
    let (mut lo, mut hi) = (0.0, 0.4);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let (a, b) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let t = 0.5 * (lo + hi);
    assert!((sol.entropy - f(t)).abs() < 1e-9, "{} {}", sol.entropy, f(t));
    assert!((sol.coupling[0] - t).abs() < 1e-6);
}

#[test]
fn listed_cases_converge() {
    let cases = [
        EndpointMarginals::from_origin(GridMeasure::discretized_standard_normal(33, 4.0).unwrap(), None).unwrap(),
        EndpointMarginals::from_origin(GridMeasure::dirac(vec![1.0]).unwrap(), Some(1.0)).unwrap(),
        EndpointMarginals::from_origin(GridMeasure::new(1, vec![-1.0, 1.0], vec![0.5, 0.5]).unwrap(), None).unwrap(),
    ];
    for m in &cases {
        let sol = solve_schrodinger_bridge(m, &BridgeOptions::default()).unwrap();
        assert!(sol.marginal_error() <= 1e-9);
        assert!(sol.entropy >= 0.0);
    }
}

#[test]
fn control_cost_tracks_entropy_on_a_small_run() {
    let model = GaussianPathModel::unit_horizon(50, 1, IncrementModel::Gaussian).unwrap();
    let q1 = GridMeasure::new(1, vec![-1.0, 1.0], vec![0.3, 0.7]).unwrap();
    let m = EndpointMarginals::from_origin(q1, None).unwrap();
    let sol = solve_schrodinger_bridge(&m, &BridgeOptions::default()).unwrap();
    let r = mikami_value_check(&model, &m, &sol, TerminalStep::Exact, 7, 4000).unwrap();
    let se = r.control_cost.standard_error;
    assert!((r.control_cost.value - sol.entropy).abs() <= 3.0 * se + 0.05 * sol.entropy, "{r:?}");
    assert!(r.terminal_tv <= 5e-2 && r.clipping_rate == 0.0);
    let again = mikami_value_check(&model, &m, &sol, TerminalStep::Exact, 7, 4000).unwrap();
    assert_eq!(r, again);
}

#[test]
fn walk_bridge_path_entropy_equals_endpoint_entropy() {
    let mut rng = StdRng::seed_from_u64(3);
    for steps in 1..=8 {
        let raw: Vec<f64> = (0..=steps).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let (path, end) = kausal_core::bridge::rademacher_bridge_entropy(steps, &q).unwrap();
        assert!((path - end).abs() <= 1e-10);
    }
}

fn random_marginals(seed: u64) -> EndpointMarginals {
    let mut rng = StdRng::seed_from_u64(seed);
    let n0 = rng.random_range(2..=3);
    let n1 = rng.random_range(2..=5);
    let weights = |rng: &mut StdRng, n: usize| {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|w| w / s).collect::<Vec<_>>()
    };
    let p = weights(&mut rng, n0);
    let q = weights(&mut rng, n1);
    let x: Vec<f64> = (0..n0).map(|i| i as f64 * 0.7 - 0.5).collect();
    let y: Vec<f64> = (0..n1).map(|j| j as f64 * 0.5 - 1.0).collect();
    EndpointMarginals::new(GridMeasure::new(1, x, p).unwrap(), GridMeasure::new(1, y, q).unwrap(), None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn ipf_error_is_monotone(seed in any::<u64>()) {
        let m = random_marginals(seed);
        let sol = solve_schrodinger_bridge(&m, &BridgeOptions::default()).unwrap();
        prop_assert!(sol.error_history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(sol.marginal_error() <= 1e-9);
    }

    #[test]
    fn bridge_beats_feasible_alternatives(seed in any::<u64>()) {
        let m = random_marginals(seed);
        let sol = solve_schrodinger_bridge(&m, &BridgeOptions::default()).unwrap();
        let (n0, n1) = (m.q0.len(), m.q1.len());
        let (p, q) = (m.q0.weights(), m.q1.weights());
        let product: Vec<f64> = (0..n0 * n1).map(|k| p[k / n1] * q[k % n1]).collect();
        let mut alternatives = vec![product.clone()];
        // mass-preserving cycles on the product plan, one each way
        let step = [product[0], product[n1 + 1], product[1], product[n1]].into_iter().fold(f64::INFINITY, f64::min) / 2.0;
        for sign in [1.0, -1.0] {
            let mut alt = product.clone();
            alt[0] += sign * step;
            alt[n1 + 1] += sign * step;
            alt[1] -= sign * step;
            alt[n1] -= sign * step;
            alternatives.push(alt);
        }
        let reference = reference_endpoint_law(&m);
        for alt in &alternatives {
            for i in 0..n0 {
                prop_assert!((alt[i * n1..(i + 1) * n1].iter().sum::<f64>() - p[i]).abs() < 1e-12);
            }
            for j in 0..n1 {
                prop_assert!(((0..n0).map(|i| alt[i * n1 + j]).sum::<f64>() - q[j]).abs() < 1e-12);
            }
            prop_assert!(sol.entropy <= endpoint_kl(alt, &reference) + 1e-10);
        }
    }

    #[test]
    fn symmetric_targets_give_mirrored_potentials(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let half = rng.random_range(1..=4usize);
        let raw: Vec<f64> = (0..half).map(|_| rng.random_range(0.1..1.0)).collect();
        let centre = if rng.random_bool(0.5) { Some(rng.random_range(0.1..1.0)) } else { None };
        let mut w: Vec<f64> = raw.iter().rev().copied().collect();
        w.extend(centre);
        w.extend(raw.iter().copied());
        let s: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|v| v / s).collect();
        let n = w.len();
        let spacing = 0.5;
        let pts: Vec<f64> = (0..n).map(|j| (j as f64 - (n - 1) as f64 / 2.0) * spacing).collect();
        let q1 = GridMeasure::new(1, pts, w).unwrap();
        let m = EndpointMarginals::from_origin(q1, None).unwrap();
        let sol = solve_schrodinger_bridge(&m, &BridgeOptions::default()).unwrap();
        for j in 0..n {
            prop_assert_eq!(sol.g[j], sol.g[n - 1 - j]);
        }
    }
}
