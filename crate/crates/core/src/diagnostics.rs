//! Graph concentration of computed couplings, Monge map extraction,
//! pushforward checks and a support-stability probe for uniqueness.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::solver::{solve_lp, Coupling, Instance, FEAS_TOL};
use crate::{Error, Result};

pub const MASS_TOL: f64 = 1e-9;
pub const PERT_EPS: f64 = 1e-7;

/// Why some `x_0` atom couples to more than one target tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FanoutClass {
    /// Every atom has a single target.
    None,
    /// Each split atom is heavier than a target atom of its heaviest tuple,
    /// so unequal weights force the split.
    WeightMismatch,
    /// Some split is not explained by weights.
    Genuine,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphVerdict {
    pub is_graph: bool,
    /// Most target tuples above `mass_tol` coupled to one `x_0` atom.
    pub max_fanout: usize,
    /// Mass outside the per-atom heaviest tuple.
    pub off_graph_mass: f64,
    /// `maps[k][a]`: atom of marginal `k + 1` paired with atom `a` of marginal 0
    /// (`None` for uncharged atoms). Present iff `is_graph`.
    pub maps: Option<Vec<Vec<Option<usize>>>>,
    pub fanout_class: FanoutClass,
    /// Set when the coupling was rounded from an entropic solution.
    pub approximate: bool,
}

/// Group the coupling by its first index and measure how far it is from a graph.
pub fn graph_extract(inst: &Instance, coupling: &Coupling, mass_tol: f64) -> GraphVerdict {
    let m = inst.marginal_count();
    let n0 = inst.shape()[0];
    let mut groups: BTreeMap<usize, Vec<(&Vec<usize>, f64)>> = BTreeMap::new();
    for (idx, &mass) in coupling.entries() {
        groups.entry(idx[0]).or_default().push((idx, mass));
    }
    let mut max_fanout = 0;
    let mut off_graph_mass = 0.0;
    let mut heaviest: Vec<Option<&Vec<usize>>> = vec![None; n0];
    let mut genuine = false;
    for (&a, tuples) in &groups {
        let fanout = tuples.iter().filter(|(_, w)| *w > mass_tol).count();
        max_fanout = max_fanout.max(fanout);
        // first strictly heavier tuple wins, so ties keep the smallest index
        let (top, top_mass) = tuples.iter().fold((tuples[0].0, tuples[0].1), |acc, &(t, w)| if w > acc.1 { (t, w) } else { acc });
        off_graph_mass += tuples.iter().map(|(_, w)| w).sum::<f64>() - top_mass;
        heaviest[a] = Some(top);
        if fanout > 1 {
            let w0 = inst.weights(0)[a];
            let forced = (1..m).any(|i| inst.weights(i)[top[i]] < w0 - mass_tol);
            genuine |= !forced;
        }
    }
    let is_graph = max_fanout == 1;
    let maps = is_graph.then(|| (1..m).map(|i| heaviest.iter().map(|t| t.map(|t| t[i])).collect()).collect());
    let fanout_class = if is_graph {
        FanoutClass::None
    } else if genuine {
        FanoutClass::Genuine
    } else {
        FanoutClass::WeightMismatch
    };
    GraphVerdict {
        is_graph,
        max_fanout,
        off_graph_mass: off_graph_mass.clamp(0.0, 1.0),
        maps,
        fanout_class,
        approximate: false,
    }
}

/// Graph verdict for an approximate (e.g. entropic) coupling.
///
/// The coupling is rounded to its per-atom heaviest tuple first, so the
/// returned maps are always present and `off_graph_mass` measures the rounding.
pub fn graph_extract_approximate(inst: &Instance, coupling: &Coupling) -> GraphVerdict {
    let raw = graph_extract(inst, coupling, 0.0);
    let mut heaviest: BTreeMap<usize, (&Vec<usize>, f64)> = BTreeMap::new();
    for (idx, &mass) in coupling.entries() {
        let e = heaviest.entry(idx[0]).or_insert((idx, mass));
        if mass > e.1 {
            *e = (idx, mass);
        }
    }
    let maps = (1..inst.marginal_count())
        .map(|i| (0..inst.shape()[0]).map(|a| heaviest.get(&a).map(|(t, _)| t[i])).collect())
        .collect();
    GraphVerdict { maps: Some(maps), approximate: true, ..raw }
}

/// Coupling `sum_a w_0(a) delta_(a, G_1(a), ..)` built from a graph verdict.
pub fn rebuild_coupling(inst: &Instance, verdict: &GraphVerdict) -> Result<Coupling> {
    let maps = verdict.maps.as_ref().ok_or_else(|| Error::Precondition("verdict carries no maps".into()))?;
    let entries = (0..inst.shape()[0]).filter_map(|a| {
        let mut idx = vec![a];
        for map in maps {
            idx.push(map[a]?);
        }
        Some((idx, inst.weights(0)[a]))
    });
    Coupling::new(inst, entries)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PushforwardReport {
    /// `max_b |w_i(b) - w_0(G_i^{-1}(b))|` per marginal `i = 1..m`.
    pub per_marginal: Vec<f64>,
    pub max_discrepancy: f64,
}

/// Compare each `w_i` with the `w_0`-mass of its preimage under the extracted map.
pub fn pushforward_check(inst: &Instance, verdict: &GraphVerdict) -> Result<PushforwardReport> {
    if !verdict.is_graph && !verdict.approximate {
        return Err(Error::Precondition("pushforward check needs a graph verdict".into()));
    }
    let maps = verdict.maps.as_ref().ok_or_else(|| Error::Precondition("verdict carries no maps".into()))?;
    let w0 = inst.weights(0);
    let per_marginal: Vec<f64> = maps
        .iter()
        .enumerate()
        .map(|(k, map)| {
            let i = k + 1;
            let mut pushed = vec![0.0; inst.shape()[i]];
            for (a, target) in map.iter().enumerate() {
                if let Some(b) = target {
                    pushed[*b] += w0[a];
                }
            }
            pushed.iter().zip(inst.weights(i)).map(|(p, w)| (p - w).abs()).fold(0.0, f64::max)
        })
        .collect();
    let max_discrepancy = per_marginal.iter().copied().fold(0.0, f64::max);
    Ok(PushforwardReport { per_marginal, max_discrepancy })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessVerdict {
    pub trials: usize,
    /// Perturbed solutions still optimal for the unperturbed cost.
    pub accepted: usize,
    pub support_stable: bool,
    /// Largest `(mass of a on S_a \ S_b + mass of b on S_b \ S_a) / 2` against the baseline.
    pub max_support_symmetric_difference_mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    pub pert_eps: f64,
    pub mass_tol: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self { pert_eps: PERT_EPS, mass_tol: MASS_TOL }
    }
}

/// Re-solve under seeded perturbations and compare supports with the baseline LP solution.
pub fn uniqueness_probe(inst: &Instance, trials: usize, seed: u64, opts: &ProbeOptions) -> Result<UniquenessVerdict> {
    if trials < 2 {
        return Err(Error::InvalidParameter("uniqueness probe needs at least 2 trials".into()));
    }
    let base = solve_lp(inst)?.coupling;
    let base_value = base.objective();
    let mut accepted = 0;
    let mut worst: f64 = 0.0;
    for k in 0..trials {
        let sol = solve_lp(&inst.perturbed(opts.pert_eps, seed, k as u64 + 1)?)?;
        let trial = Coupling::from_entries(inst, &sol.coupling.to_entries())?;
        if (trial.objective() - base_value).abs() > FEAS_TOL {
            continue;
        }
        accepted += 1;
        worst = worst.max(symmetric_difference_mass(&base, &trial, opts.mass_tol));
    }
    if accepted == 0 {
        return Err(Error::InvalidParameter(format!(
            "every perturbed solution left the optimal face; reduce pert_eps (currently {:e})",
            opts.pert_eps
        )));
    }
    Ok(UniquenessVerdict {
        trials,
        accepted,
        support_stable: worst <= opts.mass_tol,
        max_support_symmetric_difference_mass: worst,
    })
}

pub fn symmetric_difference_mass(a: &Coupling, b: &Coupling, mass_tol: f64) -> f64 {
    let (sa, sb) = (a.support(mass_tol), b.support(mass_tol));
    let only_a: f64 = sa.difference(&sb).map(|t| a.entries()[t]).sum();
    let only_b: f64 = sb.difference(&sa).map(|t| b.entries()[t]).sum();
    0.5 * (only_a + only_b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DiscreteMarginal, DomainBox};

    fn uniform(n: usize) -> DiscreteMarginal {
        let d = DomainBox::unit(1).unwrap();
        DiscreteMarginal::uniform_on(d, (0..n).map(|k| vec![k as f64 / n as f64]).collect()).unwrap()
    }

    #[test]
    fn permutation_coupling_is_a_graph() {
        let inst = Instance::from_tensor(vec![uniform(3), uniform(3), uniform(3)], vec![0.0; 27]).unwrap();
        let c = Coupling::new(&inst, (0..3).map(|a| (vec![a, (a + 1) % 3, 2 - a], 1.0 / 3.0))).unwrap();
        let v = graph_extract(&inst, &c, MASS_TOL);
        assert!(v.is_graph);
        assert_eq!(v.off_graph_mass, 0.0);
        assert_eq!(v.maps, Some(vec![vec![Some(1), Some(2), Some(0)], vec![Some(2), Some(1), Some(0)]]));
        assert_eq!(rebuild_coupling(&inst, &v).unwrap().entries(), c.entries());
        assert_eq!(pushforward_check(&inst, &v).unwrap().max_discrepancy, 0.0);
    }

    #[test]
    fn product_coupling_fanout() {
        let inst = Instance::from_tensor(vec![uniform(2), uniform(2), uniform(2)], vec![0.0; 8]).unwrap();
        let v = graph_extract(&inst, &Coupling::product(&inst).unwrap(), MASS_TOL);
        assert!(!v.is_graph);
        assert_eq!(v.max_fanout, 4);
        assert!((v.off_graph_mass - 0.75).abs() < 1e-15);
        assert!(v.maps.is_none());
        assert_eq!(v.fanout_class, FanoutClass::Genuine);
        assert!(pushforward_check(&inst, &v).is_err());
    }

    #[test]
    fn two_to_one_pushforward() {
        let d = DomainBox::unit(1).unwrap();
        let one = DiscreteMarginal::new(d, vec![vec![0.5]], vec![1.0]).unwrap();
        let inst = Instance::from_tensor(vec![uniform(2), one], vec![0.0, 0.0]).unwrap();
        let c = Coupling::new(&inst, vec![(vec![0, 0], 0.5), (vec![1, 0], 0.5)]).unwrap();
        let v = graph_extract(&inst, &c, MASS_TOL);
        assert!(v.is_graph);
        assert_eq!(pushforward_check(&inst, &v).unwrap().max_discrepancy, 0.0);
    }

    #[test]
    fn weight_mismatch_split_is_classified() {
        let d = DomainBox::unit(1).unwrap();
        let one = DiscreteMarginal::new(d.clone(), vec![vec![0.5]], vec![1.0]).unwrap();
        let halves = DiscreteMarginal::new(d, vec![vec![0.0], vec![1.0]], vec![0.5, 0.5]).unwrap();
        let inst = Instance::from_tensor(vec![one, halves], vec![0.0, 0.0]).unwrap();
        let c = Coupling::new(&inst, vec![(vec![0, 0], 0.5), (vec![0, 1], 0.5)]).unwrap();
        let v = graph_extract(&inst, &c, MASS_TOL);
        assert_eq!(v.max_fanout, 2);
        assert_eq!(v.fanout_class, FanoutClass::WeightMismatch);
    }

    #[test]
    fn zero_cost_is_not_support_stable() {
        let inst = Instance::from_tensor(vec![uniform(2), uniform(2)], vec![0.0; 4]).unwrap();
        let v = uniqueness_probe(&inst, 20, 0, &ProbeOptions::default()).unwrap();
        assert_eq!(v.accepted, 20);
        assert!(!v.support_stable);
        assert!(v.max_support_symmetric_difference_mass > 0.1);
    }

    #[test]
    fn strict_assignment_is_support_stable() {
        let inst = Instance::from_tensor(vec![uniform(2), uniform(2)], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let v = uniqueness_probe(&inst, 5, 0, &ProbeOptions::default()).unwrap();
        assert!(v.support_stable);
        assert_eq!(v.max_support_symmetric_difference_mass, 0.0);
    }

    #[test]
    fn large_perturbation_rejects_every_trial() {
        let inst = Instance::from_tensor(vec![uniform(2), uniform(2)], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let opts = ProbeOptions { pert_eps: 10.0, mass_tol: MASS_TOL };
        let errors: Vec<_> = (0..20).filter_map(|seed| uniqueness_probe(&inst, 2, seed, &opts).err()).collect();
        assert!(!errors.is_empty());
        assert!(errors.iter().all(|e| e.to_string().contains("reduce pert_eps")));
    }
}
