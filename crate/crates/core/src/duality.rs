//! Dual potentials, the sequential c-conjugation pass, complementary
//! slackness, and a probe for uniqueness of dual solutions up to constants.
//!
//! The discrete conjugate replaces an infimum over a domain by a minimum over
//! the support grid of the other marginals:
//! `u_i(a) = min_{t: t_i = a} ( C[t] - sum_{j != i} u_j(t_j) )`.

use serde::{Deserialize, Serialize};

use crate::solver::{basis_duals, solve_lp, Coupling, Instance, FEAS_TOL};
use crate::{Error, Result};

/// Tolerance for c-conjugacy of a conjugation pass output.
pub const CONJ_TOL: f64 = 1e-9;

/// `(u_0, ..., u_{m-1})`, one value per support point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Potentials {
    values: Vec<Vec<f64>>,
}

impl Potentials {
    pub fn new(values: Vec<Vec<f64>>) -> Self {
        Self { values }
    }

    pub fn zeros(inst: &Instance) -> Self {
        Self::new(inst.shape().iter().map(|&n| vec![0.0; n]).collect())
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn marginal_count(&self) -> usize {
        self.values.len()
    }

    fn check_shape(&self, inst: &Instance) -> Result<()> {
        let ok = self.values.len() == inst.marginal_count()
            && self.values.iter().zip(inst.shape()).all(|(v, &n)| v.len() == n);
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch("potentials do not match the instance shape".into()))
        }
    }

    /// `sum_i <u_i, w_i>`.
    pub fn dual_objective(&self, inst: &Instance) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v.iter().zip(inst.weights(i)).filter(|(_, &w)| w > 0.0).map(|(u, w)| u * w).sum::<f64>())
            .sum()
    }

    /// `sum_i u_i(t_i)` for one index tuple.
    pub fn sum_at(&self, idx: &[usize]) -> f64 {
        idx.iter().enumerate().map(|(i, &a)| self.values[i][a]).sum()
    }

    /// `max_t (sum_i u_i(t_i) - C[t])`; feasible when `<= FEAS_TOL`.
    pub fn max_violation(&self, inst: &Instance) -> f64 {
        (0..inst.len())
            .map(|flat| self.sum_at(&inst.unravel(flat)) - inst.cost_tensor()[flat])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Add `offsets[i]` to every value of `u_i`.
    pub fn shifted(&self, offsets: &[f64]) -> Self {
        Self::new(self.values.iter().zip(offsets).map(|(v, t)| v.iter().map(|u| u + t).collect()).collect())
    }
}

/// Output of [`conjugate_pass`].
#[derive(Debug, Clone)]
pub struct ConjugateResult {
    pub potentials: Potentials,
    /// `argmin[i][a]`: the lexicographically smallest tuple attaining the minimum for `u_i(a)`.
    pub argmin: Vec<Vec<Vec<usize>>>,
}

/// Sequential convexification: `u_0` from the start values of `1..m`, then
/// each later `u_i` from the already updated `u_0..u_{i-1}` and the start
/// values of `u_{i+1}..`.
///
/// The start must be dual feasible. The output dominates the start pointwise
/// and is c-conjugate.
pub fn conjugate_pass(inst: &Instance, start: &Potentials) -> Result<ConjugateResult> {
    start.check_shape(inst)?;
    let violation = start.max_violation(inst);
    if violation > FEAS_TOL {
        return Err(Error::InfeasiblePotentials(violation));
    }
    let mut cur = start.clone();
    let mut argmin = Vec::with_capacity(inst.marginal_count());
    for i in 0..inst.marginal_count() {
        let (values, arg) = conjugate_axis(inst, &cur, i);
        cur.values[i] = values;
        argmin.push(arg);
    }
    Ok(ConjugateResult { potentials: cur, argmin })
}

fn conjugate_axis(inst: &Instance, pot: &Potentials, axis: usize) -> (Vec<f64>, Vec<Vec<usize>>) {
    let n = inst.shape()[axis];
    let mut best = vec![f64::INFINITY; n];
    let mut arg = vec![0usize; n];
    for flat in 0..inst.len() {
        let idx = inst.unravel(flat);
        let v = inst.cost_tensor()[flat] - (pot.sum_at(&idx) - pot.values[axis][idx[axis]]);
        let a = idx[axis];
        // flat order is lexicographic, strict < keeps the first minimizer
        if v < best[a] {
            best[a] = v;
            arg[a] = flat;
        }
    }
    (best, arg.into_iter().map(|f| inst.unravel(f)).collect())
}

/// `max_{i,a} |u_i(a) - min_{t: t_i = a}(C[t] - sum_{j != i} u_j(t_j))|`.
pub fn conjugacy_residual(inst: &Instance, pot: &Potentials) -> f64 {
    (0..inst.marginal_count())
        .map(|i| {
            let (conj, _) = conjugate_axis(inst, pot, i);
            conj.iter().zip(&pot.values[i]).map(|(c, u)| (c - u).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlacknessReport {
    /// `max |C[t] - sum_i u_i(t_i)|` over tuples with positive mass.
    pub max_gap_on_support: f64,
    pub dual_objective: f64,
    pub primal_objective: f64,
    /// `primal_objective - dual_objective`.
    pub gap: f64,
}

pub fn verify_slackness(inst: &Instance, coupling: &Coupling, pot: &Potentials) -> Result<SlacknessReport> {
    pot.check_shape(inst)?;
    let max_gap_on_support = coupling
        .entries()
        .keys()
        .map(|idx| (inst.entry(idx) - pot.sum_at(idx)).abs())
        .fold(0.0, f64::max);
    let dual_objective = pot.dual_objective(inst);
    let primal_objective = coupling.objective();
    Ok(SlacknessReport { max_gap_on_support, dual_objective, primal_objective, gap: primal_objective - dual_objective })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualProbeOptions {
    pub trials: usize,
    pub seed: u64,
    /// Cost perturbation size relative to the cost range.
    pub pert_eps: f64,
    /// Spread below which offsets count as constant.
    pub tol: f64,
}

impl DualProbeOptions {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self { trials, seed, pert_eps: 1e-7, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DualVerdict {
    ConstantsUpToTolerance,
    NonConstantOffsets,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualUniquenessReport {
    pub verdict: DualVerdict,
    /// Perturbed re-solves requested.
    pub trials: usize,
    /// Perturbed re-solves dropped because their primal left the optimal face.
    pub rejected: usize,
    /// c-conjugate solutions compared (baseline, accepted trials, component shifts).
    pub solutions: usize,
    /// Connected components of the support's exchange graph.
    pub components: usize,
    /// Largest `max_a d_i(a) - min_a d_i(a)` over pairs and marginals, on charged atoms.
    pub max_spread: f64,
    /// Largest `|sum_i mean_{w_i}(d_i)|` over pairs.
    pub max_offset_sum: f64,
    /// Largest `|dual objective - LP value|` among compared solutions.
    pub max_objective_deviation: f64,
    pub note: String,
}

/// Generate several c-conjugate optimal potentials and test whether they
/// differ by per-marginal constants.
///
/// Solutions come from (a) the optimal bases of seeded cost perturbations,
/// priced with the unperturbed cost and then conjugated against it, and (b) when the support of the
/// baseline coupling splits into several exchange-graph components, a gauge
/// shift of `u_0` and `u_1` on each extra component. A shift of that kind is
/// exactly the freedom a disconnected support leaves open.
pub fn dual_uniqueness_probe(inst: &Instance, opts: &DualProbeOptions) -> Result<DualUniquenessReport> {
    if opts.trials < 2 {
        return Err(Error::InvalidParameter("dual uniqueness probe needs at least 2 trials".into()));
    }
    let base = solve_lp(inst)?;
    let lp_value = base.primal_objective();
    let baseline = conjugate_pass(inst, &base.duals)?.potentials;
    let mut solutions = vec![baseline.clone()];

    let mut rejected = 0;
    for k in 1..opts.trials {
        let sol = solve_lp(&inst.perturbed(opts.pert_eps, opts.seed, k as u64)?)?;
        let unperturbed = Coupling::from_entries(inst, &sol.coupling.to_entries())?;
        if (unperturbed.objective() - lp_value).abs() > FEAS_TOL {
            rejected += 1;
            continue;
        }
        let mut duals = basis_duals(inst, &sol.basis)?;
        let violation = duals.max_violation(inst);
        if violation > 0.0 {
            let mut offsets = vec![0.0; inst.marginal_count()];
            offsets[0] = -violation;
            duals = duals.shifted(&offsets);
        }
        solutions.push(conjugate_pass(inst, &duals)?.potentials);
    }

    let components = exchange_components(inst, &base.coupling);
    let component_count = components.iter().flatten().flatten().max().map_or(0, |c| c + 1);
    for comp in 1..component_count {
        if let Some(shifted) = component_shift(inst, &baseline, &components, comp) {
            solutions.push(conjugate_pass(inst, &shifted)?.potentials);
        }
    }

    let mut max_spread: f64 = 0.0;
    let mut max_offset_sum: f64 = 0.0;
    for a in 0..solutions.len() {
        for b in a + 1..solutions.len() {
            let (spread, offset_sum) = offsets_between(inst, &solutions[a], &solutions[b]);
            max_spread = max_spread.max(spread);
            max_offset_sum = max_offset_sum.max(offset_sum);
        }
    }
    let max_objective_deviation =
        solutions.iter().map(|p| (p.dual_objective(inst) - lp_value).abs()).fold(0.0, f64::max);
    let verdict = if max_spread <= opts.tol {
        DualVerdict::ConstantsUpToTolerance
    } else {
        DualVerdict::NonConstantOffsets
    };
    let note = format!(
        "discrete evidence only: uniqueness up to constants is a continuum statement for connected domains \
         with absolutely continuous marginals; here the support exchange graph has {component_count} component(s), \
         and only perturbation-reachable dual vertices and component gauge shifts are compared"
    );
    Ok(DualUniquenessReport {
        verdict,
        trials: opts.trials,
        rejected,
        solutions: solutions.len(),
        components: component_count,
        max_spread,
        max_offset_sum,
        max_objective_deviation,
        note,
    })
}

/// Per-marginal spread of `u - u'` on charged atoms and `|sum_i mean(u_i - u'_i)|`.
pub fn offsets_between(inst: &Instance, u: &Potentials, v: &Potentials) -> (f64, f64) {
    let mut spread: f64 = 0.0;
    let mut sum = 0.0;
    for i in 0..inst.marginal_count() {
        let w = inst.weights(i);
        let deltas: Vec<(f64, f64)> = (0..w.len())
            .filter(|&a| w[a] > 0.0)
            .map(|a| (u.values[i][a] - v.values[i][a], w[a]))
            .collect();
        let (lo, hi) = deltas.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (d, _)| (lo.min(*d), hi.max(*d)));
        spread = spread.max(hi - lo);
        sum += deltas.iter().map(|(d, w)| d * w).sum::<f64>();
    }
    (spread, sum.abs())
}

/// Component id of every charged atom under the relation "appear together in a support tuple".
fn exchange_components(inst: &Instance, coupling: &Coupling) -> Vec<Vec<Option<usize>>> {
    let offsets: Vec<usize> = inst.shape().iter().scan(0, |acc, &n| {
        let o = *acc;
        *acc += n;
        Some(o)
    }).collect();
    let total: usize = inst.shape().iter().sum();
    let mut parent: Vec<usize> = (0..total).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for idx in coupling.entries().keys() {
        let first = find(&mut parent, offsets[0] + idx[0]);
        for (i, &a) in idx.iter().enumerate().skip(1) {
            let r = find(&mut parent, offsets[i] + a);
            if r != first {
                let (lo, hi) = (r.min(first), r.max(first));
                parent[hi] = lo;
            }
        }
    }
    let mut label: Vec<Option<usize>> = vec![None; total];
    let mut next = 0;
    let mut out = Vec::with_capacity(inst.marginal_count());
    for i in 0..inst.marginal_count() {
        let mut row = Vec::with_capacity(inst.shape()[i]);
        for a in 0..inst.shape()[i] {
            if inst.weights(i)[a] <= 0.0 {
                row.push(None);
                continue;
            }
            let root = find(&mut parent, offsets[i] + a);
            let id = *label[root].get_or_insert_with(|| {
                next += 1;
                next - 1
            });
            row.push(Some(id));
        }
        out.push(row);
    }
    out
}

/// Shift `u_0 += t`, `u_1 -= t` on the atoms of one component, with `t`
/// half of the largest feasible shift (in whichever direction has room).
fn component_shift(
    inst: &Instance,
    pot: &Potentials,
    components: &[Vec<Option<usize>>],
    comp: usize,
) -> Option<Potentials> {
    let in_comp = |i: usize, a: usize| components[i][a] == Some(comp);
    let mut up = f64::INFINITY;
    let mut down = f64::INFINITY;
    for flat in 0..inst.len() {
        let idx = inst.unravel(flat);
        let sign = in_comp(0, idx[0]) as i32 - in_comp(1, idx[1]) as i32;
        let slack = inst.cost_tensor()[flat] - pot.sum_at(&idx);
        match sign {
            1 => up = up.min(slack),
            -1 => down = down.min(slack),
            _ => {}
        }
    }
    let t = if up > 0.0 && up.is_finite() {
        0.5 * up
    } else if down > 0.0 && down.is_finite() {
        -0.5 * down
    } else {
        return None;
    };
    let mut values = pot.values.clone();
    for a in 0..inst.shape()[0] {
        if in_comp(0, a) {
            values[0][a] += t;
        }
    }
    for a in 0..inst.shape()[1] {
        if in_comp(1, a) {
            values[1][a] -= t;
        }
    }
    Some(Potentials::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DiscreteMarginal, DomainBox};

    fn two_by_two() -> Instance {
        let d = DomainBox::unit(1).unwrap();
        let mu = DiscreteMarginal::uniform_on(d, vec![vec![0.0], vec![1.0]]).unwrap();
        Instance::from_tensor(vec![mu.clone(), mu], vec![0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn hand_computed_pass_from_zero() {
        let inst = two_by_two();
        let out = conjugate_pass(&inst, &Potentials::zeros(&inst)).unwrap();
        assert_eq!(out.potentials.values(), &[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(out.potentials.dual_objective(&inst), 0.0);
        assert_eq!(out.argmin[0], vec![vec![0, 0], vec![1, 1]]);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let inst = two_by_two();
        let bad = Potentials::new(vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(conjugate_pass(&inst, &bad), Err(Error::InfeasiblePotentials(_))));
        let short = Potentials::new(vec![vec![0.0]]);
        assert!(conjugate_pass(&inst, &short).is_err());
    }

    #[test]
    fn pass_output_dominates_start_and_is_conjugate() {
        let inst = two_by_two();
        let start = Potentials::new(vec![vec![-1.0, -2.0], vec![-0.5, 0.0]]);
        let out = conjugate_pass(&inst, &start).unwrap().potentials;
        for i in 0..2 {
            for a in 0..2 {
                assert!(out.values()[i][a] >= start.values()[i][a]);
            }
        }
        assert!(out.dual_objective(&inst) >= start.dual_objective(&inst));
        assert!(conjugacy_residual(&inst, &out) <= CONJ_TOL);
    }

    #[test]
    fn zero_potentials_gap_equals_objective() {
        let inst = {
            let d = DomainBox::unit(1).unwrap();
            let mu = DiscreteMarginal::uniform_on(d, vec![vec![0.0], vec![1.0]]).unwrap();
            Instance::from_tensor(vec![mu.clone(), mu], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
        };
        let product = Coupling::product(&inst).unwrap();
        let r = verify_slackness(&inst, &product, &Potentials::zeros(&inst)).unwrap();
        assert_eq!(r.dual_objective, 0.0);
        assert_eq!(r.gap, product.objective());
        assert_eq!(r.max_gap_on_support, 4.0);
    }

    #[test]
    fn shifted_conjugate_tuple_has_constant_offsets() {
        let inst = two_by_two();
        let sol = solve_lp(&inst).unwrap();
        let u = conjugate_pass(&inst, &sol.duals).unwrap().potentials;
        let v = conjugate_pass(&inst, &u.shifted(&[0.25, -0.25])).unwrap().potentials;
        let (spread, sum) = offsets_between(&inst, &u, &v);
        assert!(spread <= 1e-15 && sum <= 1e-15);
    }
}
