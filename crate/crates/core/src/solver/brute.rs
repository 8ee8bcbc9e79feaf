//! Exhaustive Monge solver for uniform, equal-size marginals.
//!
//! With `n` atoms of weight `1/n` on every axis, Monge maps from the first
//! marginal are exactly `(m-1)`-tuples of permutations. Tuples are visited in
//! lexicographic order and only a strictly better objective replaces the
//! incumbent, so ties resolve to the lexicographically smallest tuple.

use itertools::Itertools;
use serde::Serialize;

use crate::{Error, Result};

use super::Instance;

/// Default bound on `n!^(m-1) * n` tensor lookups.
pub const DEFAULT_WORK_CAP: u64 = 200_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MongeSolution {
    /// `maps[k][a]` is the atom of marginal `k + 1` paired with atom `a` of marginal 0.
    pub maps: Vec<Vec<usize>>,
    pub objective: f64,
}

pub fn brute_force_monge(inst: &Instance, work_cap: u64) -> Result<MongeSolution> {
    let n = inst.shape()[0];
    let m = inst.marginal_count();
    if inst.shape().iter().any(|&k| k != n) || !inst.marginals().iter().all(|mu| mu.is_uniform()) {
        return Err(Error::Precondition(
            "brute-force Monge search needs uniform marginals of equal size".into(),
        ));
    }
    let perm_count: u64 = (1..=n as u64).product();
    (0..m - 1)
        .try_fold(n as u64, |acc, _| acc.checked_mul(perm_count))
        .filter(|&w| w <= work_cap)
        .ok_or_else(|| Error::WorkCap(format!("{n}!^{} x {n} exceeds the cap {work_cap}", m - 1)))?;

    let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();
    let strides = inst.strides();
    let tensor = inst.cost_tensor();
    // offsets[k][p][a] = stride contribution of perms[p][a] on axis k + 1
    let offsets: Vec<Vec<Vec<usize>>> = (1..m)
        .map(|axis| perms.iter().map(|p| p.iter().map(|&b| b * strides[axis]).collect()).collect())
        .collect();
    let base: Vec<usize> = (0..n).map(|a| a * strides[0]).collect();

    let mut choice = vec![0usize; m - 1];
    let mut best_choice = choice.clone();
    let mut best = f64::INFINITY;
    loop {
        let mut total = 0.0;
        for a in 0..n {
            let mut flat = base[a];
            for (k, &p) in choice.iter().enumerate() {
                flat += offsets[k][p][a];
            }
            total += tensor[flat];
        }
        if total < best {
            best = total;
            best_choice.clone_from(&choice);
        }
        let mut k = m - 1;
        loop {
            if k == 0 {
                let maps = best_choice.iter().map(|&p| perms[p].clone()).collect();
                return Ok(MongeSolution { maps, objective: best / n as f64 });
            }
            k -= 1;
            choice[k] += 1;
            if choice[k] < perms.len() {
                break;
            }
            choice[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{dirichlet_marginal, DiscreteMarginal, DomainBox};

    #[test]
    fn single_atom_gives_identity() {
        let d = DomainBox::unit(1).unwrap();
        let one = DiscreteMarginal::new(d, vec![vec![0.5]], vec![1.0]).unwrap();
        let inst = Instance::from_tensor(vec![one.clone(), one.clone(), one], vec![2.0]).unwrap();
        let sol = brute_force_monge(&inst, DEFAULT_WORK_CAP).unwrap();
        assert_eq!(sol.maps, vec![vec![0], vec![0]]);
        assert_eq!(sol.objective, 2.0);
    }

    #[test]
    fn non_uniform_marginals_are_rejected() {
        let d = DomainBox::unit(1).unwrap();
        let mus: Vec<_> = (0..3).map(|s| dirichlet_marginal(&d, 2, s).unwrap()).collect();
        let inst = Instance::from_tensor(mus, vec![0.0; 8]).unwrap();
        assert!(matches!(brute_force_monge(&inst, DEFAULT_WORK_CAP), Err(Error::Precondition(_))));
    }

    #[test]
    fn work_cap_is_enforced() {
        let d = DomainBox::unit(1).unwrap();
        let mus: Vec<_> = (0..3).map(|s| crate::geometry::uniform_marginal(&d, 4, s).unwrap()).collect();
        let inst = Instance::from_tensor(mus, vec![0.0; 64]).unwrap();
        assert!(matches!(brute_force_monge(&inst, 100), Err(Error::WorkCap(_))));
        // 4!^2 * 4 = 2304
        assert!(brute_force_monge(&inst, 2304).is_ok());
    }

    #[test]
    fn ties_resolve_to_identity() {
        let d = DomainBox::unit(1).unwrap();
        let mus: Vec<_> = (0..3).map(|s| crate::geometry::uniform_marginal(&d, 3, s).unwrap()).collect();
        let inst = Instance::from_tensor(mus, vec![1.0; 27]).unwrap();
        let sol = brute_force_monge(&inst, DEFAULT_WORK_CAP).unwrap();
        assert_eq!(sol.maps, vec![vec![0, 1, 2], vec![0, 1, 2]]);
    }
}
