//! Structural conditions on a cost: twist, non-degeneracy, negativity of the
//! tensor `T = S + H` on the middle factors, and the segment certificate.
//!
//! Marginals are indexed `0..m`; the first factor is `0`, the last is `m - 1`
//! and the middle factors are `1..m-1`.
//!
//! `T` is reported in the transposed block layout, so that the bilinear
//! normal form `x_0.x_1 + x_0.x_2 + x_1^T A x_2` assembles to `A^T`. Its
//! quadratic form, and therefore every definiteness verdict, is unaffected.

use rayon::prelude::*;
use serde::Serialize;

use crate::costs::CostModel;
use crate::geometry::{rng_for, DomainBox, ProductConfiguration};
use crate::linalg::{self, Matrix, Vector};
use crate::{Error, Result};

pub const DET_TOL: f64 = 1e-10;
pub const TWIST_TOL: f64 = 1e-8;
pub const DEFAULT_STEPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Twist,
    Nondegeneracy,
    TensorT,
    SegmentCertificate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub condition: ConditionKind,
    /// Marginal pair `(i, j)` for twist and non-degeneracy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pair: Option<(usize, usize)>,
    pub samples_tested: usize,
    pub verdict: Verdict,
    pub worst_value: f64,
    pub threshold: f64,
    /// Configurations attaining `worst_value`.
    pub witness: Vec<ProductConfiguration>,
    pub note: String,
}

impl ConditionReport {
    pub fn failed(&self) -> bool {
        self.verdict == Verdict::Fail
    }
}

const SAMPLING_NOTE: &str = "sampling evidence, not a proof";

/// Index of the worst sample, lowest index on ties.
fn worst_index(values: &[f64], larger_is_worse: bool) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        let worse = if larger_is_worse { v > values[best] } else { v < values[best] };
        if worse {
            best = k;
        }
    }
    best
}

fn check_domains(cost: &CostModel, domains: &[DomainBox]) -> Result<()> {
    if domains.len() != cost.marginal_count() || domains.iter().zip(cost.dims()).any(|(d, &n)| d.dim() != n) {
        return Err(Error::DimensionMismatch("domains do not match the cost dimensions".into()));
    }
    Ok(())
}

fn check_pair(cost: &CostModel, i: usize, j: usize) -> Result<()> {
    let m = cost.marginal_count();
    if i >= m || j >= m || i == j {
        return Err(Error::InvalidParameter(format!("invalid marginal pair ({i}, {j}) for m = {m}")));
    }
    Ok(())
}

/// Minimum `|det D^2_{x_i x_j} c|` over sampled configurations.
pub fn check_nondegenerate(
    cost: &CostModel,
    domains: &[DomainBox],
    i: usize,
    j: usize,
    samples: usize,
    seed: u64,
    det_tol: f64,
) -> Result<ConditionReport> {
    check_domains(cost, domains)?;
    check_pair(cost, i, j)?;
    let sample = |k: usize| {
        let mut rng = rng_for(seed, k as u64);
        ProductConfiguration::new(domains.iter().map(|d| d.sample_closed(&mut rng)).collect())
    };
    if cost.dims()[i] != cost.dims()[j] {
        return Ok(ConditionReport {
            condition: ConditionKind::Nondegeneracy,
            pair: Some((i, j)),
            samples_tested: 0,
            verdict: Verdict::Fail,
            worst_value: 0.0,
            threshold: det_tol,
            witness: vec![sample(0)],
            note: format!("block is {}x{}, not square", cost.dims()[i], cost.dims()[j]),
        });
    }
    let results: Vec<(ProductConfiguration, f64)> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let x = sample(k);
            let det = linalg::determinant(&cost.second_differential(i, j, &x)?.matrix).abs();
            Ok((x, det))
        })
        .collect::<Result<_>>()?;
    report_from(
        ConditionKind::Nondegeneracy,
        Some((i, j)),
        results,
        false,
        det_tol,
        |v| v <= det_tol,
        SAMPLING_NOTE.into(),
    )
}

/// Minimum over sampled pairs of `|D_{x_i}c(.., x_j, ..) - D_{x_i}c(.., x'_j, ..)| / |x_j - x'_j|`.
///
/// Each sample fixes the coordinates other than `j` and draws
/// `pairs_per_sample` pairs `x_j != x'_j`. The witness is the colliding pair.
#[allow(clippy::too_many_arguments)]
pub fn check_twist(
    cost: &CostModel,
    domains: &[DomainBox],
    i: usize,
    j: usize,
    samples: usize,
    pairs_per_sample: usize,
    seed: u64,
    twist_tol: f64,
) -> Result<ConditionReport> {
    check_domains(cost, domains)?;
    check_pair(cost, i, j)?;
    let results: Vec<(Vec<ProductConfiguration>, f64)> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_for(seed, k as u64);
            let base = ProductConfiguration::new(domains.iter().map(|d| d.sample_closed(&mut rng)).collect());
            let mut worst: Option<(Vec<ProductConfiguration>, f64)> = None;
            for _ in 0..pairs_per_sample.max(1) {
                let (a, b) = loop {
                    let a = domains[j].sample_closed(&mut rng);
                    let b = domains[j].sample_closed(&mut rng);
                    if a != b {
                        break (a, b);
                    }
                };
                let xa = base.with_coord(j, a.clone());
                let xb = base.with_coord(j, b.clone());
                let dg = cost.gradient(i, &xa)? - cost.gradient(i, &xb)?;
                let dx = linalg::to_vector(&a) - linalg::to_vector(&b);
                let ratio = dg.norm() / dx.norm();
                if worst.as_ref().is_none_or(|(_, w)| ratio < *w) {
                    worst = Some((vec![xa, xb], ratio));
                }
            }
            Ok(worst.expect("at least one pair"))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = results.iter().map(|r| r.1).collect();
    let samples_tested = results.len();
    if samples_tested == 0 {
        return Err(Error::InvalidParameter("twist scan needs at least one sample".into()));
    }
    let k = worst_index(&values, false);
    let worst_value = values[k];
    let fail = worst_value <= twist_tol;
    Ok(ConditionReport {
        condition: ConditionKind::Twist,
        pair: Some((i, j)),
        samples_tested,
        verdict: if fail { Verdict::Fail } else { Verdict::Pass },
        worst_value,
        threshold: twist_tol,
        witness: results.into_iter().nth(k).map(|r| r.0).unwrap_or_default(),
        note: if fail {
            "gradient collision between distinct points".into()
        } else {
            format!("{SAMPLING_NOTE}: no collision found, injectivity is not proven")
        },
    })
}

fn report_from(
    condition: ConditionKind,
    pair: Option<(usize, usize)>,
    results: Vec<(ProductConfiguration, f64)>,
    larger_is_worse: bool,
    threshold: f64,
    fails: impl Fn(f64) -> bool,
    note: String,
) -> Result<ConditionReport> {
    if results.is_empty() {
        return Err(Error::InvalidParameter("scan needs at least one sample".into()));
    }
    let values: Vec<f64> = results.iter().map(|r| r.1).collect();
    let k = worst_index(&values, larger_is_worse);
    let worst_value = values[k];
    let fail = fails(worst_value);
    Ok(ConditionReport {
        condition,
        pair,
        samples_tested: results.len(),
        verdict: if fail { Verdict::Fail } else { Verdict::Pass },
        worst_value,
        threshold,
        witness: vec![results.into_iter().nth(k).expect("index in range").0],
        note,
    })
}

/// `S`, `H` and `T = S + H` at a base point and its companions.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorAssembly {
    pub base: ProductConfiguration,
    /// `companions[k]` belongs to middle factor `k + 1` and agrees with `base` there.
    pub companions: Vec<ProductConfiguration>,
    pub s: Matrix,
    pub h: Matrix,
    pub t: Matrix,
    /// Row/column offset of each middle factor's block.
    pub offsets: Vec<usize>,
}

impl TensorAssembly {
    /// Block `(a, b)` of a middle-factor matrix, with `a, b` in `1..m-1`.
    pub fn block(&self, mat: &Matrix, a: usize, b: usize) -> Matrix {
        let (ra, rb) = (self.offsets[a - 1], self.offsets[a]);
        let (ca, cb) = (self.offsets[b - 1], self.offsets[b]);
        mat.view((ra, ca), (rb - ra, cb - ca)).into_owned()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        linalg::max_symmetric_eigenvalue(&self.t)
    }
}

/// Assemble `S`, `H`, `T`.
///
/// Natural layout, with `l = m - 1` and middle indices `i, j`:
/// `S_ij = [i != j](-D^2_{x_i x_j}c) + D^2_{x_i x_l}c (D^2_{x_0 x_l}c)^{-1} D^2_{x_0 x_j}c` at `base`,
/// `H_ii = Hess_{x_i}c(companion_i) - Hess_{x_i}c(base)`. The stored matrices are
/// the transposes of these.
pub fn assemble_t(
    cost: &CostModel,
    base: &ProductConfiguration,
    companions: &[ProductConfiguration],
    det_tol: f64,
) -> Result<TensorAssembly> {
    let m = cost.marginal_count();
    if m < 3 {
        return Err(Error::Precondition(format!("the tensor T needs m >= 3, got {m}")));
    }
    if companions.len() != m - 2 {
        return Err(Error::DimensionMismatch(format!("expected {} companions, got {}", m - 2, companions.len())));
    }
    cost.check_config(base)?;
    for (k, comp) in companions.iter().enumerate() {
        cost.check_config(comp)?;
        if comp.coord(k + 1) != base.coord(k + 1) {
            return Err(Error::Precondition(format!(
                "companion {} must agree with the base in coordinate {}",
                k + 1,
                k + 1
            )));
        }
    }
    let last = m - 1;
    let dims = cost.dims();
    let mut offsets = vec![0];
    for i in 1..last {
        offsets.push(offsets[i - 1] + dims[i]);
    }
    let size = offsets[last - 1];

    let pivot = cost.second_differential(0, last, base)?.matrix;
    if pivot.nrows() != pivot.ncols() {
        return Err(Error::SingularBlock { i: 0, j: last, det: 0.0 });
    }
    let pivot_inv = linalg::inverse(&pivot, det_tol).map_err(|det| Error::SingularBlock { i: 0, j: last, det })?;

    let first: Vec<Matrix> = (1..last).map(|j| cost.second_differential(0, j, base).map(|b| b.matrix)).collect::<Result<_>>()?;
    let to_last: Vec<Matrix> =
        (1..last).map(|i| cost.second_differential(i, last, base).map(|b| b.matrix)).collect::<Result<_>>()?;

    let mut s = Matrix::zeros(size, size);
    let mut h = Matrix::zeros(size, size);
    for i in 1..last {
        for j in 1..last {
            let mut blk = &to_last[i - 1] * &pivot_inv * &first[j - 1];
            if i != j {
                blk -= cost.second_differential(i, j, base)?.matrix;
            }
            s.view_mut((offsets[i - 1], offsets[j - 1]), (dims[i], dims[j])).copy_from(&blk);
        }
        let diff = cost.second_differential(i, i, &companions[i - 1])?.matrix - cost.second_differential(i, i, base)?.matrix;
        h.view_mut((offsets[i - 1], offsets[i - 1]), (dims[i], dims[i])).copy_from(&diff);
    }
    let s = s.transpose();
    let h = h.transpose();
    let t = &s + &h;
    Ok(TensorAssembly { base: base.clone(), companions: companions.to_vec(), s, h, t, offsets })
}

/// Draw a base in the open product and companions in the closed product.
pub fn sample_tensor_inputs(domains: &[DomainBox], seed: u64, k: usize) -> (ProductConfiguration, Vec<ProductConfiguration>) {
    let mut rng = rng_for(seed, k as u64);
    let base = ProductConfiguration::new(domains.iter().map(|d| d.sample_open(&mut rng)).collect());
    let companions = (1..domains.len().saturating_sub(1))
        .map(|i| {
            let c = ProductConfiguration::new(domains.iter().map(|d| d.sample_closed(&mut rng)).collect());
            c.with_coord(i, base.coord(i).to_vec())
        })
        .collect();
    (base, companions)
}

/// Largest eigenvalue of `(T + T^T) / 2` over sampled inputs; fails when it exceeds `-margin`.
///
/// Samples where `D^2_{x_0 x_{m-1}} c` is singular cannot be assembled. They
/// are skipped, and the verdict is `Inconclusive` unless another sample fails.
pub fn scan_t_negative(
    cost: &CostModel,
    domains: &[DomainBox],
    samples: usize,
    seed: u64,
    margin: f64,
    det_tol: f64,
) -> Result<ConditionReport> {
    check_domains(cost, domains)?;
    if samples == 0 {
        return Err(Error::InvalidParameter("scan needs at least one sample".into()));
    }
    let results: Vec<(Vec<ProductConfiguration>, Option<f64>)> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let (base, companions) = sample_tensor_inputs(domains, seed, k);
            let value = match assemble_t(cost, &base, &companions, det_tol) {
                Ok(asm) => Some(asm.max_eigenvalue()),
                Err(Error::SingularBlock { .. }) => None,
                Err(e) => return Err(e),
            };
            let mut witness = vec![base];
            witness.extend(companions);
            Ok((witness, value))
        })
        .collect::<Result<_>>()?;
    let singular = results.iter().filter(|r| r.1.is_none()).count();
    let assembled: Vec<(Vec<ProductConfiguration>, f64)> =
        results.iter().filter_map(|(w, v)| v.map(|v| (w.clone(), v))).collect();
    let mut note = format!("witness is [base, companion_1, ..]; {SAMPLING_NOTE}");
    if singular > 0 {
        note.push_str(&format!("; {singular} sample(s) skipped with a singular D2_(x0,x{}) c", cost.marginal_count() - 1));
    }
    if assembled.is_empty() {
        return Ok(ConditionReport {
            condition: ConditionKind::TensorT,
            pair: None,
            samples_tested: 0,
            verdict: Verdict::Inconclusive,
            worst_value: f64::NAN,
            threshold: -margin,
            witness: results.into_iter().next().expect("at least one sample").0,
            note,
        });
    }
    let values: Vec<f64> = assembled.iter().map(|r| r.1).collect();
    let k = worst_index(&values, true);
    let worst_value = values[k];
    let verdict = if worst_value > -margin {
        Verdict::Fail
    } else if singular > 0 {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    Ok(ConditionReport {
        condition: ConditionKind::TensorT,
        pair: None,
        samples_tested: assembled.len(),
        verdict,
        worst_value,
        threshold: -margin,
        witness: assembled.into_iter().nth(k).expect("index in range").0,
        note,
    })
}

/// Largest eigenvalue of the symmetrized `H` part over sampled inputs.
///
/// Scaled by `|end - start|^2` this bounds the `H` contribution a segment
/// certificate leaves out.
pub fn h_part_bound(cost: &CostModel, domains: &[DomainBox], samples: usize, seed: u64, det_tol: f64) -> Result<f64> {
    check_domains(cost, domains)?;
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let (base, companions) = sample_tensor_inputs(domains, seed, k);
            Ok(linalg::max_symmetric_eigenvalue(&assemble_t(cost, &base, &companions, det_tol)?.h))
        })
        .collect::<Result<_>>()?;
    Ok(values.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentCertificate {
    /// Midpoint-rule value of `int_0^1 S<gamma', gamma'> dt`.
    pub value: f64,
    pub steps: usize,
    /// `x_{m-1}` solved at each node.
    pub last_path: Vec<Vec<f64>>,
    /// `sup eig(H) * |end - start|^2` when a bound was supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_bound: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SegmentOptions {
    pub steps: usize,
    pub det_tol: f64,
    /// Newton start for `x_{m-1}` at the first node.
    pub last_seed: Option<Vec<f64>>,
    /// Box searched on a grid when no seed is given.
    pub last_domain: Option<DomainBox>,
    /// Largest eigenvalue of the `H` part, e.g. from [`h_part_bound`].
    pub h_eigen_bound: Option<f64>,
}

impl SegmentOptions {
    pub fn new(steps: usize) -> Self {
        Self { steps, det_tol: DET_TOL, ..Self::default() }
    }
}

/// Integrate the `S` part of `T` along straight segments `start -> end` of
/// the middle factors, with `x_0` fixed and `x_{m-1}` tracking
/// `D_{x_0}c(x_0, gamma(t), x_{m-1}) = u0_grad`.
pub fn segment_certificate(
    cost: &CostModel,
    x0: &[f64],
    u0_grad: &[f64],
    start: &[Vec<f64>],
    end: &[Vec<f64>],
    opts: &SegmentOptions,
) -> Result<SegmentCertificate> {
    let m = cost.marginal_count();
    if m < 3 {
        return Err(Error::Precondition(format!("segment certificate needs m >= 3, got {m}")));
    }
    let dims = cost.dims();
    let last = m - 1;
    if start.len() != m - 2 || end.len() != m - 2 {
        return Err(Error::DimensionMismatch(format!("segments need {} middle points", m - 2)));
    }
    if x0.len() != dims[0] || u0_grad.len() != dims[0] {
        return Err(Error::DimensionMismatch("x0 and its gradient must have the first factor's dimension".into()));
    }
    if dims[last] != dims[0] {
        return Err(Error::DimensionMismatch("first and last factors must have equal dimension".into()));
    }
    for k in 0..m - 2 {
        if start[k].len() != dims[k + 1] || end[k].len() != dims[k + 1] {
            return Err(Error::DimensionMismatch(format!("middle point {} has the wrong dimension", k + 1)));
        }
    }
    if opts.steps == 0 {
        return Err(Error::InvalidParameter("quadrature needs at least one step".into()));
    }
    let velocity: Vec<f64> = start.iter().zip(end).flat_map(|(s, e)| s.iter().zip(e).map(|(a, b)| b - a)).collect();
    let v = Vector::from_vec(velocity);
    let len2 = v.norm_squared();
    let h_bound = opts.h_eigen_bound.map(|b| b * len2);
    if len2 == 0.0 {
        return Ok(SegmentCertificate { value: 0.0, steps: opts.steps, last_path: Vec::new(), h_bound });
    }

    let at = |t: f64, xl: &[f64]| {
        let mut coords = vec![x0.to_vec()];
        coords.extend(start.iter().zip(end).map(|(s, e)| s.iter().zip(e).map(|(a, b)| a + t * (b - a)).collect()));
        coords.push(xl.to_vec());
        ProductConfiguration::new(coords)
    };
    let target = linalg::to_vector(u0_grad);
    let t0 = 0.5 / opts.steps as f64;
    let mut xl = match (&opts.last_seed, &opts.last_domain) {
        (Some(seed), _) => seed.clone(),
        (None, Some(domain)) => grid_seed(cost, domain, &|xl| at(t0, xl), &target)?,
        (None, None) => vec![0.0; dims[last]],
    };
    let mut total = 0.0;
    let mut last_path = Vec::with_capacity(opts.steps);
    for k in 0..opts.steps {
        let t = (k as f64 + 0.5) / opts.steps as f64;
        xl = newton_last(cost, &|xl| at(t, xl), &target, xl, opts.det_tol)?;
        let y = at(t, &xl);
        let s = s_part(cost, &y, opts.det_tol)?;
        total += v.dot(&(&s * &v));
        last_path.push(xl.clone());
    }
    Ok(SegmentCertificate { value: total / opts.steps as f64, steps: opts.steps, last_path, h_bound })
}

/// Natural-layout `S` at one configuration.
fn s_part(cost: &CostModel, y: &ProductConfiguration, det_tol: f64) -> Result<Matrix> {
    let m = y.marginal_count();
    let companions: Vec<ProductConfiguration> = (1..m - 1).map(|_| y.clone()).collect();
    Ok(assemble_t(cost, y, &companions, det_tol)?.s.transpose())
}

fn residual(cost: &CostModel, y: &ProductConfiguration, target: &Vector) -> Result<Vector> {
    Ok(cost.gradient(0, y)? - target)
}

fn grid_seed(
    cost: &CostModel,
    domain: &DomainBox,
    at: &dyn Fn(&[f64]) -> ProductConfiguration,
    target: &Vector,
) -> Result<Vec<f64>> {
    const GRID: usize = 17;
    let d = domain.dim();
    let total = GRID.pow(d as u32);
    let mut best = (f64::INFINITY, domain.lower().to_vec());
    for flat in 0..total {
        let mut rem = flat;
        let p: Vec<f64> = (0..d)
            .map(|k| {
                let g = rem % GRID;
                rem /= GRID;
                domain.lower()[k] + (domain.upper()[k] - domain.lower()[k]) * g as f64 / (GRID - 1) as f64
            })
            .collect();
        let r = residual(cost, &at(&p), target)?.norm();
        if r < best.0 {
            best = (r, p);
        }
    }
    Ok(best.1)
}

fn newton_last(
    cost: &CostModel,
    at: &dyn Fn(&[f64]) -> ProductConfiguration,
    target: &Vector,
    start: Vec<f64>,
    det_tol: f64,
) -> Result<Vec<f64>> {
    let last = cost.marginal_count() - 1;
    let mut x = start;
    let mut r = residual(cost, &at(&x), target)?;
    let scale = 1.0 + target.norm();
    for _ in 0..100 {
        if r.norm() <= 1e-12 * scale {
            return Ok(x);
        }
        let y = at(&x);
        let jac = cost.second_differential(0, last, &y)?.matrix;
        let step = linalg::inverse(&jac, det_tol).map_err(|det| Error::SingularBlock { i: 0, j: last, det })? * &r;
        let mut lambda = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a - lambda * s).collect();
            let rt = residual(cost, &at(&trial), target)?;
            if rt.norm() < r.norm() || lambda < 1e-10 {
                x = trial;
                r = rt;
                break;
            }
            lambda *= 0.5;
        }
    }
    if r.norm() <= 1e-9 * scale {
        Ok(x)
    } else {
        Err(Error::Newton(format!("residual {:e} after 100 iterations", r.norm())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::{Bilinear, ConcaveOfSum};

    fn boxes(m: usize, n: usize) -> Vec<DomainBox> {
        (0..m).map(|_| DomainBox::unit(n).unwrap()).collect()
    }

    fn gs(m: usize, n: usize) -> CostModel {
        CostModel::new(ConcaveOfSum::negative_squared_norm(m, n).unwrap())
    }

    #[test]
    fn singular_outer_block_makes_the_scan_inconclusive() {
        let one = Matrix::identity(1, 1);
        let cost = CostModel::new(Bilinear::new(vec![1; 3], vec![(0, 1, one.clone()), (1, 2, one)]).unwrap());
        let r = scan_t_negative(&cost, &boxes(3, 1), 5, 0, 0.0, DET_TOL).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert_eq!(r.samples_tested, 0);
        assert!(r.worst_value.is_nan());
        assert!(r.note.contains("5 sample(s) skipped"));
    }

    #[test]
    fn gs_tensor_is_minus_two_identity() {
        let cost = gs(4, 2);
        let (base, comps) = sample_tensor_inputs(&boxes(4, 2), 3, 0);
        let asm = assemble_t(&cost, &base, &comps, DET_TOL).unwrap();
        assert!(linalg::max_abs(&(&asm.t + 2.0 * linalg::identity(4))) < 1e-12);
        assert!(linalg::max_abs(&asm.h) == 0.0);
    }

    #[test]
    fn bilinear_normal_form_assembles_to_transpose() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let cost = CostModel::new(Bilinear::normal_form(a.clone()).unwrap());
        let (base, comps) = sample_tensor_inputs(&boxes(3, 2), 1, 0);
        let asm = assemble_t(&cost, &base, &comps, DET_TOL).unwrap();
        assert!(linalg::max_abs(&(&asm.t - a.transpose())) < 1e-12);
    }

    #[test]
    fn companion_must_agree_with_base() {
        let cost = gs(3, 1);
        let base = ProductConfiguration::new(vec![vec![0.1], vec![0.2], vec![0.3]]);
        let comp = ProductConfiguration::new(vec![vec![0.1], vec![0.9], vec![0.3]]);
        assert!(matches!(assemble_t(&cost, &base, &[comp], DET_TOL), Err(Error::Precondition(_))));
    }

    #[test]
    fn singular_pivot_reports_determinant() {
        let z = Matrix::zeros(1, 1);
        let cost = CostModel::new(Bilinear::new(vec![1, 1, 1], vec![(1, 2, linalg::identity(1)), (0, 1, z)]).unwrap());
        let base = ProductConfiguration::new(vec![vec![0.1], vec![0.2], vec![0.3]]);
        let err = assemble_t(&cost, &base, &[base.clone()], DET_TOL).unwrap_err();
        assert!(matches!(err, Error::SingularBlock { i: 0, j: 2, .. }));
    }

    #[test]
    fn twist_on_zero_cost_fails_with_witness() {
        let cost = CostModel::from_fn("zero", vec![1, 1, 1], |_| 0.0);
        let r = check_twist(&cost, &boxes(3, 1), 0, 2, 5, 2, 0, TWIST_TOL).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.witness.len(), 2);
    }

    #[test]
    fn twist_ratio_of_gs_is_two() {
        let r = check_twist(&gs(3, 2), &boxes(3, 2), 0, 2, 10, 3, 0, TWIST_TOL).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!((r.worst_value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn nondegeneracy_of_gs_and_missing_block() {
        let r = check_nondegenerate(&gs(3, 2), &boxes(3, 2), 0, 2, 10, 0, DET_TOL).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!((r.worst_value - 4.0).abs() < 1e-12);
        let cost = CostModel::new(Bilinear::new(vec![1, 1, 1], vec![(0, 1, linalg::identity(1))]).unwrap());
        let r = check_nondegenerate(&cost, &boxes(3, 1), 0, 2, 10, 0, DET_TOL).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.worst_value, 0.0);
        assert_eq!(r.witness.len(), 1);
    }

    #[test]
    fn unequal_dimensions_fail_immediately() {
        let cost = CostModel::from_fn("c", vec![1, 2, 1], |_| 0.0);
        let domains = vec![DomainBox::unit(1).unwrap(), DomainBox::unit(2).unwrap(), DomainBox::unit(1).unwrap()];
        let r = check_nondegenerate(&cost, &domains, 0, 1, 10, 0, DET_TOL).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.samples_tested, 0);
        assert!(!r.witness.is_empty());
    }

    #[test]
    fn segment_on_gs_is_minus_two_length_squared() {
        let cost = gs(3, 1);
        let opts = SegmentOptions::new(DEFAULT_STEPS);
        let c = segment_certificate(&cost, &[0.2], &[-1.0], &[vec![0.1]], &[vec![0.7]], &opts).unwrap();
        assert!((c.value + 2.0 * 0.36).abs() < 1e-10);
        let zero = segment_certificate(&cost, &[0.2], &[-1.0], &[vec![0.4]], &[vec![0.4]], &opts).unwrap();
        assert_eq!(zero.value, 0.0);
    }

    #[test]
    fn segment_tracks_the_implicit_last_point() {
        // D_{x0}c = -2(x0 + x1 + x2) = g  =>  x2 = -g/2 - x0 - x1
        let cost = gs(3, 1);
        let mut opts = SegmentOptions::new(4);
        opts.last_domain = Some(DomainBox::cube(1, -5.0, 5.0).unwrap());
        let c = segment_certificate(&cost, &[0.2], &[-1.0], &[vec![0.0]], &[vec![1.0]], &opts).unwrap();
        for (k, xl) in c.last_path.iter().enumerate() {
            let t = (k as f64 + 0.5) / 4.0;
            assert!((xl[0] - (0.5 - 0.2 - t)).abs() < 1e-9);
        }
    }
}
