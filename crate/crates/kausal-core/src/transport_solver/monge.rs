//! Exhaustive Monge search for tiny instances.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::CostMatrix;
use crate::error::{Error, Result};
use crate::path_space::{is_adapted_map, PathMeasure};
use crate::scalar::Scalar;

/// Largest path count accepted on either side.
pub const MONGE_MAX_PATHS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct MongeResult<S> {
    pub value: S,
    /// Target path per first-space path; null paths map to 0.
    pub map: Vec<usize>,
}

struct Search<'a, S> {
    eta: &'a PathMeasure<S>,
    nu: &'a PathMeasure<S>,
    cost: &'a CostMatrix,
    adapted_only: bool,
    rows: Vec<usize>,
    map: Vec<usize>,
    capacity: Vec<S>,
    best: Option<MongeResult<S>>,
}

impl<S: Scalar> Search<'_, S> {
    fn tol(&self) -> f64 {
        1e-12 * self.eta.len() as f64
    }

    fn descend(&mut self, depth: usize) -> Result<()> {
        if depth == self.rows.len() {
            return self.leaf();
        }
        let i = self.rows[depth];
        let w = self.eta.weight(i).clone();
        for j in 0..self.nu.len() {
            if !self.cost.get(i, j).is_finite() {
                continue;
            }
            let rest = self.capacity[j].clone() - w.clone();
            if rest.is_neg_tol(self.tol()) {
                continue;
            }
            let saved = core::mem::replace(&mut self.capacity[j], rest);
            self.map[i] = j;
            self.descend(depth + 1)?;
            self.capacity[j] = saved;
        }
        self.map[i] = 0;
        Ok(())
    }

    fn leaf(&mut self) -> Result<()> {
        if !self.capacity.iter().all(|c| c.is_zero_tol(self.tol())) {
            return Ok(());
        }
        if self.adapted_only && !is_adapted_map(&self.map, self.eta.space(), self.nu.space(), self.eta)? {
            return Ok(());
        }
        let value = self
            .rows
            .iter()
            .fold(S::zero(), |acc, &i| acc + self.eta.weight(i).clone() * S::from_f64(self.cost.get(i, self.map[i])));
        if self.best.as_ref().is_none_or(|b| value < b.value) {
            self.best = Some(MongeResult { value, map: self.map.clone() });
        }
        Ok(())
    }
}

/// Best map `U` with `U∗η = ν`, optionally restricted to adapted maps; `None`
/// when no such map exists.
pub fn monge_bruteforce<S: Scalar>(
    eta: &PathMeasure<S>,
    nu: &PathMeasure<S>,
    cost: &CostMatrix,
    adapted_only: bool,
) -> Result<Option<MongeResult<S>>> {
    if eta.len() > MONGE_MAX_PATHS || nu.len() > MONGE_MAX_PATHS {
        return Err(Error::SizeGuard(format!(
            "monge search allows at most {MONGE_MAX_PATHS} paths per side, got {} and {}",
            eta.len(),
            nu.len()
        )));
    }
    if cost.rows() != eta.len() || cost.cols() != nu.len() {
        return Err(crate::error::invalid("cost does not match the measures"));
    }
    if adapted_only && eta.space().steps() != nu.space().steps() {
        return Err(crate::error::invalid("spaces have different numbers of steps"));
    }
    let rows = eta.support();
    let mut search = Search {
        eta,
        nu,
        cost,
        adapted_only,
        rows,
        map: vec![0; eta.len()],
        capacity: nu.weights().to_vec(),
        best: None,
    };
    search.descend(0)?;
    Ok(search.best)
}

/// Causal Monge problem: the best adapted map pushing `η` to `ν`.
pub fn solve_causal_monge_bruteforce<S: Scalar>(
    eta: &PathMeasure<S>,
    nu: &PathMeasure<S>,
    cost: &CostMatrix,
) -> Result<Option<MongeResult<S>>> {
    monge_bruteforce(eta, nu, cost, true)
}
