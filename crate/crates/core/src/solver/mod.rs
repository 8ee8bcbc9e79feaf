//! Discrete multi-marginal Kantorovich problem.
//!
//! An [`Instance`] materializes the cost tensor `C[a_0, ..., a_{m-1}]` once;
//! all solvers work on that tensor. Flat indices are row-major (last axis
//! fastest).

mod brute;
mod entropic;
mod lp;

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::costs::CostModel;
use crate::geometry::{rng_for, DiscreteMarginal, ProductConfiguration};
use crate::{Error, Result};

pub use brute::{brute_force_monge, MongeSolution, DEFAULT_WORK_CAP};
pub use entropic::{solve_entropic, EntropicOptions, EntropicSolution};
pub use lp::{basis_duals, solve_lp, solve_lp_with, LpOptions, LpSolution};

/// Marginal feasibility tolerance used across solvers and reports.
pub const FEAS_TOL: f64 = 1e-9;

/// Default cap on the number of cost-tensor entries.
pub const DEFAULT_MATERIALIZATION_CAP: usize = 1_000_000;

#[derive(Debug, Clone)]
pub struct Instance {
    marginals: Vec<DiscreteMarginal>,
    cost: Option<CostModel>,
    shape: Vec<usize>,
    strides: Vec<usize>,
    tensor: Vec<f64>,
}

fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn checked_size(shape: &[usize], cap: usize) -> Result<usize> {
    let mut total: usize = 1;
    for &n in shape {
        total = total.checked_mul(n).ok_or(Error::CapExceeded { entries: usize::MAX, cap })?;
    }
    if total > cap {
        return Err(Error::CapExceeded { entries: total, cap });
    }
    Ok(total)
}

impl Instance {
    pub fn new(marginals: Vec<DiscreteMarginal>, cost: CostModel) -> Result<Self> {
        Self::with_cap(marginals, cost, DEFAULT_MATERIALIZATION_CAP)
    }

    /// Materialize `C` by evaluating the cost on every support tuple.
    pub fn with_cap(marginals: Vec<DiscreteMarginal>, cost: CostModel, cap: usize) -> Result<Self> {
        if marginals.len() < 2 {
            return Err(Error::InvalidParameter("need at least two marginals".into()));
        }
        if cost.marginal_count() != marginals.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} marginals but the cost has {} factors",
                marginals.len(),
                cost.marginal_count()
            )));
        }
        for (i, (mu, &d)) in marginals.iter().zip(cost.dims()).enumerate() {
            if mu.dim() != d {
                return Err(Error::DimensionMismatch(format!(
                    "marginal {i} lives in dimension {}, cost expects {d}",
                    mu.dim()
                )));
            }
        }
        let shape: Vec<usize> = marginals.iter().map(DiscreteMarginal::len).collect();
        let total = checked_size(&shape, cap)?;
        let strides = strides_for(&shape);
        let tensor = (0..total)
            .into_par_iter()
            .map(|flat| {
                let idx = unravel(&strides, &shape, flat);
                cost.eval(&configuration(&marginals, &idx))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self { marginals, cost: Some(cost), shape, strides, tensor })
    }

    /// Instance from an explicit cost tensor (row-major, last axis fastest).
    pub fn from_tensor(marginals: Vec<DiscreteMarginal>, tensor: Vec<f64>) -> Result<Self> {
        if marginals.len() < 2 {
            return Err(Error::InvalidParameter("need at least two marginals".into()));
        }
        let shape: Vec<usize> = marginals.iter().map(DiscreteMarginal::len).collect();
        let total = checked_size(&shape, usize::MAX)?;
        if tensor.len() != total {
            return Err(Error::DimensionMismatch(format!("tensor has {} entries, expected {total}", tensor.len())));
        }
        if tensor.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("cost tensor has non-finite entries".into()));
        }
        let strides = strides_for(&shape);
        Ok(Self { marginals, cost: None, shape, strides, tensor })
    }

    /// Same marginals and cost model with a replaced tensor (used for perturbation probes).
    pub fn with_tensor(&self, tensor: Vec<f64>) -> Result<Self> {
        if tensor.len() != self.tensor.len() {
            return Err(Error::DimensionMismatch("replacement tensor has the wrong size".into()));
        }
        Ok(Self { tensor, ..self.clone() })
    }

    /// Tensor plus i.i.d. `U(-1, 1) * rel_eps * range` noise, where `range` is
    /// the cost range (or 1 for a constant tensor). Stream `stream` of `seed`.
    pub fn perturbed(&self, rel_eps: f64, seed: u64, stream: u64) -> Result<Self> {
        let range = self.cost_range();
        let scale = rel_eps * if range > 0.0 { range } else { 1.0 };
        let mut rng = rng_for(seed, stream);
        self.with_tensor(self.tensor.iter().map(|c| c + scale * rng.random_range(-1.0..1.0)).collect())
    }

    pub fn marginals(&self) -> &[DiscreteMarginal] {
        &self.marginals
    }

    pub fn marginal(&self, i: usize) -> &DiscreteMarginal {
        &self.marginals[i]
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        self.marginals[i].weights()
    }

    pub fn cost(&self) -> Option<&CostModel> {
        self.cost.as_ref()
    }

    pub fn marginal_count(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn cost_tensor(&self) -> &[f64] {
        &self.tensor
    }

    pub fn len(&self) -> usize {
        self.tensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensor.is_empty()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    pub fn unravel(&self, flat: usize) -> Vec<usize> {
        unravel(&self.strides, &self.shape, flat)
    }

    pub fn entry(&self, idx: &[usize]) -> f64 {
        self.tensor[self.flat_index(idx)]
    }

    /// The support points `(x_0[a_0], ..., x_{m-1}[a_{m-1}])`.
    pub fn configuration(&self, idx: &[usize]) -> ProductConfiguration {
        configuration(&self.marginals, idx)
    }

    /// `max C - min C`.
    pub fn cost_range(&self) -> f64 {
        let (lo, hi) = self
            .tensor
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &c| (lo.min(c), hi.max(c)));
        hi - lo
    }
}

fn unravel(strides: &[usize], shape: &[usize], flat: usize) -> Vec<usize> {
    strides.iter().zip(shape).map(|(s, n)| (flat / s) % n).collect()
}

fn configuration(marginals: &[DiscreteMarginal], idx: &[usize]) -> ProductConfiguration {
    ProductConfiguration::new(idx.iter().zip(marginals).map(|(&a, mu)| mu.points()[a].clone()).collect())
}

/// One positive entry of a coupling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingEntry {
    pub index: Vec<usize>,
    pub mass: f64,
}

/// Sparse nonnegative measure on the product of support grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    entries: BTreeMap<Vec<usize>, f64>,
    objective: f64,
}

impl Coupling {
    /// Keeps strictly positive masses; duplicate indices are summed.
    pub fn new(inst: &Instance, entries: impl IntoIterator<Item = (Vec<usize>, f64)>) -> Result<Self> {
        let mut map: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (idx, mass) in entries {
            if idx.len() != inst.marginal_count() || idx.iter().zip(inst.shape()).any(|(a, n)| a >= n) {
                return Err(Error::DimensionMismatch(format!("coupling index {idx:?} outside the grid")));
            }
            if !mass.is_finite() || mass < 0.0 {
                return Err(Error::InvalidParameter(format!("coupling mass {mass} at {idx:?}")));
            }
            if mass > 0.0 {
                *map.entry(idx).or_insert(0.0) += mass;
            }
        }
        let objective = map.iter().map(|(idx, w)| w * inst.entry(idx)).sum();
        Ok(Self { entries: map, objective })
    }

    pub fn from_entries(inst: &Instance, entries: &[CouplingEntry]) -> Result<Self> {
        Self::new(inst, entries.iter().map(|e| (e.index.clone(), e.mass)))
    }

    /// Product coupling `mu_0 x ... x mu_{m-1}`.
    pub fn product(inst: &Instance) -> Result<Self> {
        Self::new(
            inst,
            (0..inst.len()).map(|flat| {
                let idx = inst.unravel(flat);
                let w = idx.iter().enumerate().map(|(i, &a)| inst.weights(i)[a]).product();
                (idx, w)
            }),
        )
    }

    pub fn entries(&self) -> &BTreeMap<Vec<usize>, f64> {
        &self.entries
    }

    pub fn to_entries(&self) -> Vec<CouplingEntry> {
        self.entries.iter().map(|(index, &mass)| CouplingEntry { index: index.clone(), mass }).collect()
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Projection onto axis `i`.
    pub fn marginal(&self, i: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (idx, w) in &self.entries {
            out[idx[i]] += w;
        }
        out
    }

    /// Max absolute deviation of any projection from the instance weights.
    pub fn max_marginal_error(&self, inst: &Instance) -> f64 {
        (0..inst.marginal_count())
            .flat_map(|i| {
                let proj = self.marginal(i, inst.shape()[i]);
                proj.into_iter().zip(inst.weights(i).iter()).map(|(p, w)| (p - w).abs()).collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// Indices carrying mass above `mass_tol`.
    pub fn support(&self, mass_tol: f64) -> BTreeSet<Vec<usize>> {
        self.entries.iter().filter(|(_, &w)| w > mass_tol).map(|(k, _)| k.clone()).collect()
    }
}

impl Serialize for Coupling {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_entries().serialize(s)
    }
}
