//! Causality of couplings: the generated-filtration test, the conditional-law
//! test, and the linear equalities used by the solvers.
//!
//! Kernels are only constrained on paths of positive first-marginal mass.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::path_space::{Coupling, FilteredPathSpace, PathMeasure};
use crate::scalar::Scalar;

/// Scale-aware tolerance for comparing kernel values in float mode.
pub fn kernel_tolerance<S: Scalar>(eta: &PathMeasure<S>) -> f64 {
    1e-9 * f64::max(1.0, 1.0 / eta.min_positive())
}

/// Tolerance used when grouping kernel vectors into cells.
pub const CELL_TOL: f64 = 1e-12;

/// Counterexample to causality: two paths in one first-space atom at time `t`
/// whose kernels give different mass to the second-space atom `atom`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Witness {
    pub t: usize,
    pub omega: usize,
    pub omega_prime: usize,
    pub atom: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalityVerdict {
    pub causal: bool,
    pub witness: Option<Witness>,
}

fn check_steps<S: Scalar>(gamma: &Coupling<S>) -> Result<()> {
    if gamma.first_space().steps() != gamma.second_space().steps() {
        return Err(invalid("spaces have different numbers of steps"));
    }
    Ok(())
}

/// `K[ω][A] = Θ^ω(A)` for atoms `A` of the second space at time `t`; `None` on null rows.
fn kernel_table<S: Scalar>(gamma: &Coupling<S>, eta: &PathMeasure<S>, t: usize) -> Vec<Option<Vec<S>>> {
    let s_atoms = gamma.second_space().atoms(t);
    (0..gamma.rows())
        .map(|i| {
            if !eta.is_positive(i) {
                return None;
            }
            let mass = eta.weight(i).clone();
            Some(s_atoms.iter().map(|a| gamma.row_mass(i, a) / mass.clone()).collect())
        })
        .collect()
}

/// Partition of the positive paths induced by `ω ↦ (Θ^ω(A))_A` at time `t`.
pub fn generated_filtration<S: Scalar>(gamma: &Coupling<S>, t: usize) -> Result<Vec<Vec<usize>>> {
    check_steps(gamma)?;
    if t == 0 || t > gamma.first_space().steps() {
        return Err(invalid("time out of range"));
    }
    let eta = gamma.first_marginal();
    let table = kernel_table(gamma, &eta, t);
    let mut cells: Vec<Vec<usize>> = Vec::new();
    for (i, row) in table.iter().enumerate() {
        let Some(row) = row else { continue };
        let found = cells.iter().position(|cell| {
            let rep = table[cell[0]].as_ref().expect("cell members are positive");
            rep.iter().zip(row).all(|(a, b)| a.approx_eq(b, CELL_TOL))
        });
        match found {
            Some(c) => cells[c].push(i),
            None => cells.push(vec![i]),
        }
    }
    Ok(cells)
}

/// Checks that the kernel is constant on the positive part of every
/// first-space atom at every time, returning a witness otherwise.
pub fn is_causal<S: Scalar>(gamma: &Coupling<S>) -> Result<CausalityVerdict> {
    check_steps(gamma)?;
    let eta = gamma.first_marginal();
    let tol = kernel_tolerance(&eta);
    let first = gamma.first_space();
    for t in 1..=first.steps() {
        let table = kernel_table(gamma, &eta, t);
        let mut rep: Vec<Option<usize>> = vec![None; first.atom_count(t)];
        for (i, row) in table.iter().enumerate() {
            let Some(row) = row else { continue };
            let atom = first.atom_of(t, i);
            match rep[atom] {
                None => rep[atom] = Some(i),
                Some(r) => {
                    let base = table[r].as_ref().expect("representative is positive");
                    if let Some(a) = base.iter().zip(row).position(|(x, y)| !x.approx_eq(y, tol)) {
                        return Ok(CausalityVerdict {
                            causal: false,
                            witness: Some(Witness { t, omega: r, omega_prime: i, atom: a }),
                        });
                    }
                }
            }
        }
    }
    Ok(CausalityVerdict { causal: true, witness: None })
}

/// Conditional-law form: for each time and second-space atom `A`, the
/// conditional probability of `A` given the whole first path must equal its
/// conditional expectation given the first-space atom at that time.
pub fn is_causal_via_conditional_laws<S: Scalar>(gamma: &Coupling<S>) -> Result<bool> {
    check_steps(gamma)?;
    let eta = gamma.first_marginal();
    let tol = kernel_tolerance(&eta);
    let first = gamma.first_space();
    let second = gamma.second_space();
    for t in 1..=first.steps() {
        let e_atoms = first.atoms(t);
        for a in second.atoms(t) {
            for d in &e_atoms {
                let mass = S::sum(d.iter().map(|&i| eta.weight(i)));
                if !mass.is_pos_tol(0.0) {
                    continue;
                }
                let joint = d.iter().fold(S::zero(), |acc, &i| acc + gamma.row_mass(i, &a));
                let conditional = joint / mass;
                for &i in d {
                    if !eta.is_positive(i) {
                        continue;
                    }
                    // γ({ω}×A) against η(ω)·E[Θ(A) | atom]
                    let lhs = gamma.row_mass(i, &a);
                    let rhs = eta.weight(i).clone() * conditional.clone();
                    if !lhs.approx_eq(&rhs, tol * eta.weight(i).to_f64()) {
                        return Ok(false);
                    }
                }
            }
        }
    }
    Ok(true)
}

/// `γ({ω}×A)·η(ω′) − γ({ω′}×A)·η(ω) = 0` for consecutive positive paths of one
/// first-space atom.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainEquality<S> {
    pub t: usize,
    pub e_atom: usize,
    pub s_atom: usize,
    pub omega: usize,
    pub omega_prime: usize,
    /// Second-space paths in the atom.
    pub set: Vec<usize>,
    /// `η(ω′)`, multiplying the `ω` block.
    pub coef_omega: S,
    /// `η(ω)`, subtracted on the `ω′` block.
    pub coef_omega_prime: S,
}

impl<S: Scalar> ChainEquality<S> {
    /// Sparse coefficients over `(row, col)` coupling entries.
    pub fn terms(&self) -> impl Iterator<Item = (usize, usize, S)> + '_ {
        let pos = self.set.iter().map(move |&j| (self.omega, j, self.coef_omega.clone()));
        let neg = self.set.iter().map(move |&j| (self.omega_prime, j, -self.coef_omega_prime.clone()));
        pos.chain(neg)
    }

    pub fn residual(&self, gamma: &Coupling<S>) -> S {
        gamma.row_mass(self.omega, &self.set) * self.coef_omega.clone()
            - gamma.row_mass(self.omega_prime, &self.set) * self.coef_omega_prime.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalityConstraintSet<S> {
    pub rows: usize,
    pub cols: usize,
    pub equalities: Vec<ChainEquality<S>>,
}

impl<S: Scalar> CausalityConstraintSet<S> {
    pub fn len(&self) -> usize {
        self.equalities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.equalities.is_empty()
    }

    pub fn max_residual(&self, gamma: &Coupling<S>) -> f64 {
        self.equalities.iter().map(|e| e.residual(gamma).to_f64().abs()).fold(0.0, f64::max)
    }

    pub fn satisfied_by(&self, gamma: &Coupling<S>, tol: f64) -> bool {
        self.equalities.iter().all(|e| e.residual(gamma).is_zero_tol(tol))
    }
}

/// Linearization of causality for a fixed first marginal `η`.
///
/// Chains run over the positive paths of each first-space atom in index order;
/// second-space times with a single atom are implied by the marginal and skipped.
pub fn causality_constraints<S: Scalar>(
    first: &FilteredPathSpace,
    second: &FilteredPathSpace,
    eta: &PathMeasure<S>,
) -> Result<CausalityConstraintSet<S>> {
    if first.steps() != second.steps() {
        return Err(invalid("spaces have different numbers of steps"));
    }
    if eta.len() != first.len() {
        return Err(invalid("measure does not match the first space"));
    }
    let mut equalities = Vec::new();
    for t in 1..=first.steps() {
        if second.atom_count(t) < 2 {
            continue;
        }
        let s_atoms = second.atoms(t);
        for (e_atom, members) in first.atoms(t).iter().enumerate() {
            let positive: Vec<usize> = members.iter().copied().filter(|&i| eta.is_positive(i)).collect();
            if positive.len() < 2 {
                continue;
            }
            for (s_atom, set) in s_atoms.iter().enumerate() {
                for pair in positive.windows(2) {
                    equalities.push(ChainEquality {
                        t,
                        e_atom,
                        s_atom,
                        omega: pair[0],
                        omega_prime: pair[1],
                        set: set.clone(),
                        coef_omega: eta.weight(pair[1]).clone(),
                        coef_omega_prime: eta.weight(pair[0]).clone(),
                    });
                }
            }
        }
    }
    Ok(CausalityConstraintSet { rows: first.len(), cols: second.len(), equalities })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_space::{graph_coupling, product_coupling};
    use crate::scalar::Rational;
    use alloc::sync::Arc;

    fn r(n: i64, d: i64) -> Rational {
        Rational::from_ratio(n, d)
    }

    fn binary2() -> Arc<FilteredPathSpace> {
        Arc::new(FilteredPathSpace::coordinate(&[2, 2]).unwrap())
    }

    #[test]
    fn product_is_causal_with_single_cell() {
        let e = binary2();
        let eta = PathMeasure::new(e.clone(), vec![r(1, 8), r(3, 8), r(1, 4), r(1, 4)]).unwrap();
        let nu = PathMeasure::new(e, vec![r(1, 2), r(1, 6), r(1, 6), r(1, 6)]).unwrap();
        let g = product_coupling(&eta, &nu);
        for t in 1..=2 {
            assert_eq!(generated_filtration(&g, t).unwrap(), vec![vec![0, 1, 2, 3]]);
        }
        assert_eq!(is_causal(&g).unwrap(), CausalityVerdict { causal: true, witness: None });
        assert!(is_causal_via_conditional_laws(&g).unwrap());
    }

    #[test]
    fn identity_groups_by_first_coordinate() {
        let e = binary2();
        let u = PathMeasure::<Rational>::uniform(e.clone());
        let g = graph_coupling(&[0, 1, 2, 3], &u, &e).unwrap();
        assert_eq!(generated_filtration(&g, 1).unwrap(), vec![vec![0, 1], vec![2, 3]]);
        assert!(is_causal(&g).unwrap().causal);
        assert!(is_causal_via_conditional_laws(&g).unwrap());
    }

    #[test]
    fn swap_groups_by_second_coordinate_and_fails() {
        let e = binary2();
        let u = PathMeasure::<Rational>::uniform(e.clone());
        let g = graph_coupling(&[0, 2, 1, 3], &u, &e).unwrap();
        assert_eq!(generated_filtration(&g, 1).unwrap(), vec![vec![0, 2], vec![1, 3]]);
        let v = is_causal(&g).unwrap();
        assert!(!v.causal);
        let w = v.witness.unwrap();
        assert_eq!(w.t, 1);
        assert_eq!(e.atom_of(1, w.omega), e.atom_of(1, w.omega_prime));
        assert!(!is_causal_via_conditional_laws(&g).unwrap());
    }

    #[test]
    fn single_step_has_no_constraints() {
        let e = FilteredPathSpace::coordinate(&[3]).unwrap();
        let s = FilteredPathSpace::coordinate(&[2]).unwrap();
        let eta = PathMeasure::<Rational>::uniform(Arc::new(e.clone()));
        assert!(causality_constraints(&e, &s, &eta).unwrap().is_empty());
    }

    #[test]
    fn binary_two_step_has_four_equalities() {
        let e = binary2();
        let eta = PathMeasure::<Rational>::uniform(e.clone());
        let set = causality_constraints(&e, &e, &eta).unwrap();
        assert_eq!(set.len(), 4);
        assert!(set.equalities.iter().all(|q| q.t == 1));
        let pairs: Vec<(usize, usize)> = set.equalities.iter().map(|q| (q.e_atom, q.s_atom)).collect();
        assert_eq!(pairs, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn trivial_first_filtration_forces_constant_kernel() {
        let e = Arc::new(FilteredPathSpace::trivial_until_end(&[2, 2]).unwrap());
        let s = binary2();
        let eta = PathMeasure::<Rational>::uniform(e.clone());
        let set = causality_constraints(&e, &s, &eta).unwrap();
        // one atom of four positive paths: 3 chain links per S-atom at t=1
        assert_eq!(set.len(), 3 * 2);
        // a coupling whose time-1 kernel varies with ω violates them
        let g = graph_coupling(&[0, 1, 2, 3], &eta, &s).unwrap();
        assert!(!set.satisfied_by(&g, 0.0));
        assert!(!is_causal(&g).unwrap().causal);
        // a coupling whose time-1 kernel is constant satisfies them
        let nu = PathMeasure::<Rational>::uniform(s.clone());
        let g = product_coupling(&eta, &nu);
        assert!(set.satisfied_by(&g, 0.0));
    }

    #[test]
    fn null_rows_are_ignored() {
        let e = binary2();
        let eta = PathMeasure::new(e.clone(), vec![r(1, 2), r(0, 1), r(1, 2), r(0, 1)]).unwrap();
        assert!(causality_constraints(&e, &e, &eta).unwrap().is_empty());
        let g = graph_coupling(&[3, 0, 1, 0], &eta, &e).unwrap();
        assert!(is_causal(&g).unwrap().causal);
        assert!(is_causal_via_conditional_laws(&g).unwrap());
    }

    #[test]
    fn float_tolerance_scales_with_smallest_mass() {
        let e = binary2();
        let eta = PathMeasure::new(e, vec![1e-3, 0.499, 0.25, 0.25]).unwrap();
        assert!((kernel_tolerance(&eta) - 1e-6).abs() < 1e-18);
    }
}
