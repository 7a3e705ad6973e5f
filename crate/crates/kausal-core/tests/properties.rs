//! Randomized properties of couplings, causality and the transport solvers.
//!
//! Instances are drawn from a seeded generator so that proptest only has to
//! shrink a single `u64`.

use std::sync::Arc;

use kausal_core::causality::{causality_constraints, generated_filtration, is_causal, is_causal_via_conditional_laws};
use kausal_core::path_space::{
    conditional_kernel, graph_coupling, is_adapted_map, marginals, product_coupling, Coupling, FilteredPathSpace,
    PathMeasure,
};
use kausal_core::scalar::{Rational, Scalar};
use kausal_core::transport_solver::simplex::SimplexOptions;
use kausal_core::transport_solver::{
    dual_violation, solve_causal_entropic, solve_causal_mk, solve_causal_monge_bruteforce, solve_classic_mk,
    CostMatrix, EntropicOptions, SolveStatus,
};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn r(n: i64, d: i64) -> Rational {
    Rational::from_ratio(n, d)
}

fn alphabets(rng: &mut StdRng, steps: usize, max_symbols: usize, max_paths: usize) -> Vec<usize> {
    loop {
        let a: Vec<usize> = (0..steps).map(|_| rng.random_range(1..=max_symbols)).collect();
        if a.iter().product::<usize>() <= max_paths {
            return a;
        }
    }
}

/// Coordinate filtration, or a random coarsening of it that still refines in time.
fn space(rng: &mut StdRng, alphabets: &[usize]) -> Arc<FilteredPathSpace> {
    let coord = FilteredPathSpace::coordinate(alphabets).unwrap();
    if rng.random_bool(0.5) {
        return Arc::new(coord);
    }
    let n = coord.len();
    let mut labels: Vec<Vec<usize>> = Vec::new();
    let mut prev = vec![0usize; n];
    for t in 1..=alphabets.len() {
        let prefixes = coord.atom_count(t);
        let bits: Vec<usize> = (0..prefixes).map(|_| rng.random_range(0..2)).collect();
        let discrete = t == alphabets.len() && rng.random_bool(0.5);
        let cur: Vec<usize> =
            (0..n).map(|i| if discrete { i } else { prev[i] * 2 + bits[coord.atom_of(t, i)] }).collect();
        labels.push(cur.clone());
        prev = cur;
    }
    Arc::new(FilteredPathSpace::from_labels(alphabets, labels).unwrap())
}

fn weights(rng: &mut StdRng, n: usize, allow_zero: bool) -> Vec<Rational> {
    let lo = if allow_zero { 0 } else { 1 };
    let mut raw: Vec<i64> = (0..n).map(|_| rng.random_range(lo..=3)).collect();
    if raw.iter().all(|&w| w == 0) {
        raw[rng.random_range(0..n)] = 1;
    }
    let total: i64 = raw.iter().sum();
    raw.iter().map(|&w| r(w, total)).collect()
}

fn measure(rng: &mut StdRng, sp: &Arc<FilteredPathSpace>) -> PathMeasure<Rational> {
    PathMeasure::new(sp.clone(), weights(rng, sp.len(), true)).unwrap()
}

fn random_coupling(rng: &mut StdRng, e: &Arc<FilteredPathSpace>, s: &Arc<FilteredPathSpace>) -> Coupling<Rational> {
    Coupling::new(e.clone(), s.clone(), weights(rng, e.len() * s.len(), true)).unwrap()
}

/// Sequential construction: the law of `σ_t` given `σ_{<t}` depends on `ω`
/// only through its time-`t` atom, so every kernel `ω ↦ Θ^ω(A)`, `A` in the
/// time-`t` partition of `S`, is measurable for `E` at `t`.
fn causal_coupling(rng: &mut StdRng, eta: &PathMeasure<Rational>, s: &Arc<FilteredPathSpace>) -> Coupling<Rational> {
    let e = eta.space();
    let steps = e.steps();
    let alph = s.alphabets().to_vec();
    // q[t][(e_atom, s_prefix)] = law of the next symbol
    let mut tables: Vec<std::collections::HashMap<(usize, Vec<usize>), Vec<Rational>>> =
        vec![Default::default(); steps];
    let m = s.len();
    let mut w = vec![r(0, 1); e.len() * m];
    for i in 0..e.len() {
        for j in 0..m {
            let path = s.path(j).to_vec();
            let mut p = eta.weight(i).clone();
            for t in 0..steps {
                let key = (e.atom_of(t + 1, i), path[..t].to_vec());
                let law = tables[t].entry(key).or_insert_with(|| weights(rng, alph[t], true)).clone();
                p = p * law[path[t]].clone();
            }
            w[i * m + j] = p;
        }
    }
    Coupling::new(e.clone(), s.clone(), w).unwrap()
}

fn random_map(rng: &mut StdRng, n: usize, m: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..m)).collect()
}

fn cost(rng: &mut StdRng, n: usize, m: usize) -> CostMatrix {
    let entries: Vec<f64> = (0..n * m).map(|_| rng.random_range(0..5) as f64).collect();
    CostMatrix::new(n, m, entries).unwrap()
}

struct Pair {
    eta: PathMeasure<Rational>,
    s: Arc<FilteredPathSpace>,
}

fn pair(rng: &mut StdRng, max_symbols: usize, max_paths: usize) -> Pair {
    let steps = rng.random_range(1..=3);
    let ea = alphabets(rng, steps, max_symbols, max_paths);
    let sa = alphabets(rng, steps, max_symbols, max_paths);
    let e = space(rng, &ea);
    let s = space(rng, &sa);
    Pair { eta: measure(rng, &e), s }
}

fn kernel_differs(gamma: &Coupling<Rational>, t: usize, a: usize, b: usize, atom: usize) -> bool {
    let k = conditional_kernel(gamma);
    let set = &gamma.second_space().atoms(t)[atom];
    k.value(a, set).unwrap() != k.value(b, set).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn definition_and_conditional_law_routes_agree(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let Pair { eta, s } = pair(&mut rng, 3, 27);
        let gamma = match seed % 3 {
            0 => random_coupling(&mut rng, eta.space(), &s),
            1 => causal_coupling(&mut rng, &eta, &s),
            _ => graph_coupling(&random_map(&mut rng, eta.len(), s.len()), &eta, &s).unwrap(),
        };
        let verdict = is_causal(&gamma).unwrap();
        prop_assert_eq!(verdict.causal, is_causal_via_conditional_laws(&gamma).unwrap());
        if seed % 3 == 1 {
            prop_assert!(verdict.causal);
        }
        if let Some(w) = verdict.witness {
            prop_assert!(!verdict.causal);
            let e = gamma.first_space();
            prop_assert_eq!(e.atom_of(w.t, w.omega), e.atom_of(w.t, w.omega_prime));
            prop_assert!(kernel_differs(&gamma, w.t, w.omega, w.omega_prime, w.atom));
        }
    }

    #[test]
    fn float_check_agrees_with_exact_check(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let Pair { eta, s } = pair(&mut rng, 3, 27);
        let gamma = if seed % 2 == 0 { causal_coupling(&mut rng, &eta, &s) } else { random_coupling(&mut rng, eta.space(), &s) };
        prop_assert_eq!(is_causal(&gamma).unwrap().causal, is_causal(&gamma.to_f64()).unwrap().causal);
    }

    #[test]
    fn generated_filtration_is_coarser_iff_causal(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let Pair { eta, s } = pair(&mut rng, 3, 27);
        let gamma = if seed % 2 == 0 { causal_coupling(&mut rng, &eta, &s) } else { random_coupling(&mut rng, eta.space(), &s) };
        let e = gamma.first_space().clone();
        let mut coarser = true;
        for t in 1..=e.steps() {
            for cell in generated_filtration(&gamma, t).unwrap() {
                // every E-atom (restricted to positive paths) lies inside one cell
                for other in generated_filtration(&gamma, t).unwrap() {
                    if cell != other && cell.iter().any(|&a| other.iter().any(|&b| e.atom_of(t, a) == e.atom_of(t, b))) {
                        coarser = false;
                    }
                }
            }
        }
        prop_assert_eq!(coarser, is_causal(&gamma).unwrap().causal);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn causal_couplings_are_convex(seed in any::<u64>(), num in 0i64..=7) {
        let mut rng = StdRng::seed_from_u64(seed);
        let Pair { eta, s } = pair(&mut rng, 3, 27);
        let a = causal_coupling(&mut rng, &eta, &s);
        let b = causal_coupling(&mut rng, &eta, &s);
        let mix = a.mix(&r(num, 7), &b).unwrap();
        prop_assert!(is_causal(&mix).unwrap().causal);
        prop_assert!(is_causal_via_conditional_laws(&mix).unwrap());
    }

    #[test]
    fn graph_coupling_is_causal_iff_map_is_adapted(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let Pair { eta, s } = pair(&mut rng, 3, 27);
        let map = random_map(&mut rng, eta.len(), s.len());
        let gamma = graph_coupling(&map, &eta, &s).unwrap();
        let adapted = is_adapted_map(&map, eta.space(), &s, &eta).unwrap();
        prop_assert_eq!(is_causal(&gamma).unwrap().causal, adapted);
    }

    #[test]
    fn degenerate_filtrations_make_everything_causal(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let steps = rng.random_range(1..=3);
        let e = Arc::new(FilteredPathSpace::degenerate(&alphabets(&mut rng, steps, 3, 27)).unwrap());
        let s = Arc::new(FilteredPathSpace::degenerate(&alphabets(&mut rng, steps, 3, 27)).unwrap());
        let gamma = random_coupling(&mut rng, &e, &s);
        prop_assert!(is_causal(&gamma).unwrap().causal);
        prop_assert!(is_causal_via_conditional_laws(&gamma).unwrap());
    }

    #[test]
    fn constraints_are_sound_and_complete(seed in any::<u64>(), num in 0i64..=4) {
        let mut rng = StdRng::seed_from_u64(seed);
        let Pair { eta, s } = pair(&mut rng, 3, 27);
        let causal = causal_coupling(&mut rng, &eta, &s);
        // a random coupling with the same first marginal
        let other = conditional_kernel(&random_coupling(&mut rng, eta.space(), &s));
        let mut rows: Vec<Rational> = Vec::new();
        for i in 0..eta.len() {
            let row = if other.is_defined(i) { other.row(i).unwrap().to_vec() } else { weights(&mut rng, s.len(), false) };
            rows.extend(row.into_iter().map(|k| eta.weight(i).clone() * k));
        }
        let noise = Coupling::new(eta.space().clone(), s.clone(), rows).unwrap();
        let gamma = causal.mix(&r(num, 4), &noise).unwrap();
        let set = causality_constraints(eta.space(), &s, &eta).unwrap();
        prop_assert_eq!(set.satisfied_by(&gamma, 0.0), is_causal(&gamma).unwrap().causal);
        prop_assert!(set.satisfied_by(&causal, 0.0));
        prop_assert!(set.equalities.iter().all(|e| eta.is_positive(e.omega) && eta.is_positive(e.omega_prime)));
    }

    #[test]
    fn kernel_round_trip_and_marginal_identities(seed in any::<u64>(), num in 0i64..=5) {
        let mut rng = StdRng::seed_from_u64(seed);
        let Pair { eta, s } = pair(&mut rng, 3, 27);
        let gamma = random_coupling(&mut rng, eta.space(), &s);
        let (first, _) = marginals(&gamma);
        prop_assert_eq!(conditional_kernel(&gamma).reconstruct(&first).unwrap(), gamma.clone());
        let g = gamma.to_f64();
        let back = conditional_kernel(&g).reconstruct(&first.to_f64()).unwrap();
        let err = back.weights().iter().zip(g.weights()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-14);

        let nu = measure(&mut rng, &s);
        let (a, b) = marginals(&product_coupling(&eta, &nu));
        prop_assert_eq!(a, eta.clone());
        prop_assert_eq!(b, nu.clone());

        let other = random_coupling(&mut rng, eta.space(), &s);
        let lam = r(num, 5);
        let mixed = marginals(&gamma.mix(&lam, &other).unwrap());
        let (g1, g2) = marginals(&gamma);
        let (o1, o2) = marginals(&other);
        prop_assert_eq!(mixed.0, g1.mix(&lam, &o1).unwrap());
        prop_assert_eq!(mixed.1, g2.mix(&lam, &o2).unwrap());

        let map = random_map(&mut rng, eta.len(), s.len());
        let push = graph_coupling(&map, &eta, &s).unwrap().second_marginal();
        for j in 0..s.len() {
            let mass = (0..eta.len()).filter(|&i| map[i] == j).fold(r(0, 1), |acc, i| acc + eta.weight(i).clone());
            prop_assert_eq!(push.weight(j).clone(), mass);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn lp_solutions_are_certified(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let Pair { eta, s } = pair(&mut rng, 2, 8);
        let nu = measure(&mut rng, &s);
        let c = cost(&mut rng, eta.len(), s.len());
        let opts = SimplexOptions::default();
        let exact_s = solve_causal_mk(&eta, &nu, &c, &opts).unwrap();
        let exact_t = solve_classic_mk(&eta, &nu, &c, &opts).unwrap();
        prop_assert!(exact_s.is_optimal() && exact_t.is_optimal());
        prop_assert!(exact_s.value >= exact_t.value);
        prop_assert_eq!(exact_s.gap, 0.0);
        prop_assert_eq!(exact_t.gap, 0.0);
        prop_assert!(is_causal(exact_s.plan.as_ref().unwrap()).unwrap().causal);
        let set = causality_constraints(eta.space(), &s, &eta).unwrap();
        prop_assert_eq!(dual_violation(&c, Some(&set), exact_s.dual.as_ref().unwrap()), 0.0);

        let (ef, nf) = (eta.to_f64(), nu.to_f64());
        let float_s = solve_causal_mk(&ef, &nf, &c, &opts).unwrap();
        let float_t = solve_classic_mk(&ef, &nf, &c, &opts).unwrap();
        prop_assert!(float_s.is_optimal() && float_t.is_optimal());
        let vs = Scalar::to_f64(&exact_s.value);
        prop_assert!((float_s.value - vs).abs() <= 1e-9);
        prop_assert!((float_t.value - Scalar::to_f64(&exact_t.value)).abs() <= 1e-9);
        prop_assert!(float_s.gap.abs() <= 1e-8 * vs.abs().max(1.0));
        let fset = causality_constraints(ef.space(), &s, &ef).unwrap();
        prop_assert!(dual_violation(&c, Some(&fset), float_s.dual.as_ref().unwrap()) <= 1e-9);
        prop_assert!(is_causal(float_s.plan.as_ref().unwrap()).unwrap().causal);
        prop_assert!(float_s.marginal_residual <= 1e-9 && float_s.constraint_residual <= 1e-9);

        if let Some(m) = solve_causal_monge_bruteforce(&eta, &nu, &c).unwrap() {
            prop_assert!(m.value >= exact_s.value);
        }
    }

    #[test]
    fn degenerate_filtrations_give_classic_value(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let steps = rng.random_range(1..=3);
        let e = Arc::new(FilteredPathSpace::degenerate(&alphabets(&mut rng, steps, 2, 8)).unwrap());
        let s = Arc::new(FilteredPathSpace::degenerate(&alphabets(&mut rng, steps, 2, 8)).unwrap());
        let eta = measure(&mut rng, &e).to_f64();
        let nu = measure(&mut rng, &s).to_f64();
        let c = cost(&mut rng, e.len(), s.len());
        let opts = SimplexOptions::default();
        let a = solve_causal_mk(&eta, &nu, &c, &opts).unwrap().value;
        let b = solve_classic_mk(&eta, &nu, &c, &opts).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn causal_value_is_convex_in_target(seed in any::<u64>(), num in 0i64..=6) {
        let mut rng = StdRng::seed_from_u64(seed);
        let Pair { eta, s } = pair(&mut rng, 2, 8);
        let nu1 = measure(&mut rng, &s);
        let nu2 = measure(&mut rng, &s);
        let c = cost(&mut rng, eta.len(), s.len());
        let lam = r(num, 6);
        let opts = SimplexOptions::default();
        let v = |nu: &PathMeasure<Rational>| solve_causal_mk(&eta, nu, &c, &opts).unwrap().value;
        let lhs = v(&nu1.mix(&lam, &nu2).unwrap());
        let rhs = lam.clone() * v(&nu1) + (r(1, 1) - lam) * v(&nu2);
        prop_assert!(lhs <= rhs);
    }

    #[test]
    fn entropic_plans_satisfy_constraints(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let Pair { eta, s } = pair(&mut rng, 2, 8);
        let nu = measure(&mut rng, &s).to_f64();
        let eta = eta.to_f64();
        let c = cost(&mut rng, eta.len(), s.len());
        let sol = solve_causal_entropic(&eta, &nu, &c, 0.1, &EntropicOptions::default()).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        prop_assert!(sol.constraint_residual <= 1e-8);
        prop_assert!(sol.marginal_residual <= 1e-8);
        let lp = solve_causal_mk(&eta, &nu, &c, &SimplexOptions::default()).unwrap();
        prop_assert!(sol.value >= lp.value - 1e-8);
    }
}
