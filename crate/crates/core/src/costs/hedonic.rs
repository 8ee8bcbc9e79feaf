//! Hedonic costs `c(x) = min_{z in Z} sum_i f_i(x_i, z)`.
//!
//! The inner problem is solved by a grid search over `Z` followed by
//! projected Newton refinement of every grid-local minimum. Differentials
//! follow from the envelope identity `D_{x_i} c = D_{x_i} f_i(x_i, z(x))`
//! and the implicit-function derivative of `z(x)`:
//!
//! ```text
//! A        = sum_i D2_zz f_i
//! Hess_i c = -(D2_{x_i z} f_i) A^-1 (D2_{z x_i} f_i) + Hess_{x_i} f_i
//! D2_ij c  = -(D2_{x_i z} f_i) A^-1 (D2_{z x_j} f_j)          (i != j)
//! ```

use itertools::Itertools;
use nalgebra::Cholesky;

use crate::geometry::{DomainBox, ProductConfiguration};
use crate::linalg::{self, Matrix, Vector};
use crate::{Error, Result};

use super::{Capabilities, CostFamily};

/// Settings for the inner minimization over `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSettings {
    /// Grid points per `z` coordinate.
    pub grid: usize,
    /// Newton iterations per candidate.
    pub refine_rounds: usize,
    /// Step-size stopping tolerance (relative).
    pub tol: f64,
    /// Minimum value gap between the best and any other distinct local minimizer.
    pub separation: f64,
    /// Smallest admissible eigenvalue of `A` at the minimizer.
    pub definiteness_tol: f64,
}

impl Default for InnerSettings {
    fn default() -> Self {
        Self { grid: 33, refine_rounds: 60, tol: 1e-14, separation: 1e-9, definiteness_tol: 1e-10 }
    }
}

/// One sub-cost
/// `f(x, z) = x^T (P z + q) + x^T B x / 2 + bl.x + z^T L z / 2 + ll.z
///            + quartic/4 * sum_k z_k^4 + coupling/2 * sum_k x_k^2 z_k^2`.
///
/// With `quartic = coupling = 0` this is `x . alpha(z) + beta(x) + lambda(z)`
/// with affine `alpha` and quadratic `beta`, `lambda`. `|x - z|^2 / 2` is the
/// case `P = -I, B = I, L = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct HedonicTerm {
    pub p: Matrix,
    pub q: Vector,
    pub b: Matrix,
    pub bl: Vector,
    pub l: Matrix,
    pub ll: Vector,
    pub quartic: f64,
    pub coupling: f64,
}

impl HedonicTerm {
    /// Term with only the bilinear part `x^T P z`.
    pub fn zero(dx: usize, dz: usize) -> Self {
        Self {
            p: Matrix::zeros(dx, dz),
            q: Vector::zeros(dx),
            b: Matrix::zeros(dx, dx),
            bl: Vector::zeros(dx),
            l: Matrix::zeros(dz, dz),
            ll: Vector::zeros(dz),
            quartic: 0.0,
            coupling: 0.0,
        }
    }

    /// `|x - z|^2 / 2` on `R^d x R^d`.
    pub fn squared_distance(d: usize) -> Self {
        let eye = linalg::identity(d);
        Self { p: -eye.clone(), b: eye.clone(), l: eye, ..Self::zero(d, d) }
    }

    pub fn dx(&self) -> usize {
        self.p.nrows()
    }

    pub fn dz(&self) -> usize {
        self.p.ncols()
    }

    fn validate(&self) -> Result<()> {
        let (dx, dz) = (self.dx(), self.dz());
        let ok = dx > 0
            && dz > 0
            && self.q.len() == dx
            && self.b.shape() == (dx, dx)
            && self.bl.len() == dx
            && self.l.shape() == (dz, dz)
            && self.ll.len() == dz;
        if !ok {
            return Err(Error::InvalidParameter("hedonic term blocks have inconsistent shapes".into()));
        }
        if self.coupling != 0.0 && dx != dz {
            return Err(Error::InvalidParameter("coupling term needs dim x == dim z".into()));
        }
        for m in [&self.b, &self.l] {
            if linalg::max_abs(&(m - m.transpose())) > 1e-12 * (1.0 + linalg::max_abs(m)) {
                return Err(Error::InvalidParameter("B and L must be symmetric".into()));
            }
        }
        Ok(())
    }

    pub fn value(&self, x: &Vector, z: &Vector) -> f64 {
        let mut v = x.dot(&(&self.p * z + &self.q)) + 0.5 * x.dot(&(&self.b * x)) + self.bl.dot(x);
        v += 0.5 * z.dot(&(&self.l * z)) + self.ll.dot(z);
        v += 0.25 * self.quartic * z.iter().map(|t| t.powi(4)).sum::<f64>();
        if self.coupling != 0.0 {
            v += 0.5 * self.coupling * x.iter().zip(z.iter()).map(|(a, b)| a * a * b * b).sum::<f64>();
        }
        v
    }

    pub fn grad_x(&self, x: &Vector, z: &Vector) -> Vector {
        let mut g = &self.p * z + &self.q + &self.b * x + &self.bl;
        if self.coupling != 0.0 {
            g += x.component_mul(&z.component_mul(z)) * self.coupling;
        }
        g
    }

    pub fn grad_z(&self, x: &Vector, z: &Vector) -> Vector {
        let mut g = self.p.transpose() * x + &self.l * z + &self.ll;
        g += z.map(|t| t.powi(3)) * self.quartic;
        if self.coupling != 0.0 {
            g += x.component_mul(x).component_mul(z) * self.coupling;
        }
        g
    }

    pub fn hess_xx(&self, x: &Vector, z: &Vector) -> Matrix {
        let _ = x;
        let mut h = self.b.clone();
        if self.coupling != 0.0 {
            h += Matrix::from_diagonal(&z.component_mul(z)) * self.coupling;
        }
        h
    }

    /// `D^2_{x z} f`, rows indexed by `x`.
    pub fn hess_xz(&self, x: &Vector, z: &Vector) -> Matrix {
        let mut h = self.p.clone();
        if self.coupling != 0.0 {
            h += Matrix::from_diagonal(&x.component_mul(z)) * (2.0 * self.coupling);
        }
        h
    }

    pub fn hess_zz(&self, x: &Vector, z: &Vector) -> Matrix {
        let mut h = self.l.clone();
        if self.quartic != 0.0 {
            h += Matrix::from_diagonal(&z.map(|t| 3.0 * t * t)) * self.quartic;
        }
        if self.coupling != 0.0 {
            h += Matrix::from_diagonal(&x.component_mul(x)) * self.coupling;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HedonicSpec {
    pub z_domain: DomainBox,
    pub terms: Vec<HedonicTerm>,
    pub settings: InnerSettings,
}

/// Result of the inner minimization at one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub z: Vector,
    pub value: f64,
    pub on_boundary: bool,
}

#[derive(Debug, Clone)]
pub struct Hedonic {
    spec: HedonicSpec,
    dims: Vec<usize>,
}

impl Hedonic {
    pub fn new(spec: HedonicSpec) -> Result<Self> {
        if spec.terms.len() < 2 {
            return Err(Error::InvalidParameter("hedonic cost needs at least two terms".into()));
        }
        let dz = spec.z_domain.dim();
        for t in &spec.terms {
            t.validate()?;
            if t.dz() != dz {
                return Err(Error::InvalidParameter(format!(
                    "term has dim z = {}, Z box has {dz}",
                    t.dz()
                )));
            }
        }
        if spec.settings.grid < 2 {
            return Err(Error::InvalidParameter("inner grid needs at least 2 points per axis".into()));
        }
        let dims = spec.terms.iter().map(HedonicTerm::dx).collect();
        Ok(Self { spec, dims })
    }

    pub fn spec(&self) -> &HedonicSpec {
        &self.spec
    }

    pub fn term(&self, i: usize) -> &HedonicTerm {
        &self.spec.terms[i]
    }

    fn xs(x: &ProductConfiguration) -> Vec<Vector> {
        x.coords().iter().map(|c| linalg::to_vector(c)).collect()
    }

    fn objective(&self, xs: &[Vector], z: &Vector) -> f64 {
        self.spec.terms.iter().zip(xs).map(|(t, x)| t.value(x, z)).sum()
    }

    fn objective_grad(&self, xs: &[Vector], z: &Vector) -> Vector {
        let mut g = Vector::zeros(z.len());
        for (t, x) in self.spec.terms.iter().zip(xs) {
            g += t.grad_z(x, z);
        }
        g
    }

    /// `A = sum_i D^2_zz f_i(x_i, z)`.
    pub fn a_matrix(&self, xs: &[Vector], z: &Vector) -> Matrix {
        let dz = z.len();
        let mut a = Matrix::zeros(dz, dz);
        for (t, x) in self.spec.terms.iter().zip(xs) {
            a += t.hess_zz(x, z);
        }
        a
    }

    fn project(&self, z: &mut Vector) {
        let b = &self.spec.z_domain;
        for k in 0..z.len() {
            z[k] = z[k].clamp(b.lower()[k], b.upper()[k]);
        }
    }

    fn refine(&self, xs: &[Vector], start: Vector) -> (Vector, f64) {
        let s = &self.spec.settings;
        let mut z = start;
        let mut f = self.objective(xs, &z);
        for _ in 0..s.refine_rounds {
            let g = self.objective_grad(xs, &z);
            let gnorm = g.norm();
            let dir = match Cholesky::new(self.a_matrix(xs, &z)) {
                Some(ch) => -ch.solve(&g),
                None => -g,
            };
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-12 {
                let mut cand = &z + &dir * t;
                self.project(&mut cand);
                let fc = self.objective(xs, &cand);
                // near the minimizer value changes drop below rounding; the gradient still resolves progress
                let flat = (fc - f).abs() <= 16.0 * f64::EPSILON * (1.0 + f.abs());
                if fc < f || (flat && self.objective_grad(xs, &cand).norm() < gnorm) || fc == f {
                    let step = (&cand - &z).norm();
                    z = cand;
                    f = fc;
                    moved = step > s.tol * (1.0 + z.norm());
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        (z, f)
    }

    /// Minimize `sum_i f_i(x_i, z)` over the Z box.
    pub fn inner_solve(&self, x: &ProductConfiguration) -> Result<InnerSolution> {
        let xs = Self::xs(x);
        let s = &self.spec.settings;
        let zb = &self.spec.z_domain;
        let dz = zb.dim();
        let axes: Vec<Vec<f64>> = (0..dz)
            .map(|k| {
                let (lo, hi) = (zb.lower()[k], zb.upper()[k]);
                (0..s.grid).map(|g| lo + (hi - lo) * g as f64 / (s.grid - 1) as f64).collect()
            })
            .collect();
        let nodes: Vec<Vec<usize>> = (0..dz).map(|_| 0..s.grid).multi_cartesian_product().collect();
        let values: Vec<f64> = nodes
            .iter()
            .map(|node| {
                let z = Vector::from_iterator(dz, node.iter().enumerate().map(|(k, &g)| axes[k][g]));
                self.objective(&xs, &z)
            })
            .collect();
        let flat = |node: &[usize]| node.iter().fold(0, |acc, &g| acc * s.grid + g);
        let mut candidates: Vec<usize> = (0..nodes.len())
            .filter(|&id| {
                let node = &nodes[id];
                (0..dz).all(|k| {
                    [-1i64, 1].iter().all(|&d| {
                        let g = node[k] as i64 + d;
                        if g < 0 || g >= s.grid as i64 {
                            return true;
                        }
                        let mut nb = node.clone();
                        nb[k] = g as usize;
                        values[id] <= values[flat(&nb)]
                    })
                })
            })
            .collect();
        candidates.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        candidates.truncate(8);
        if candidates.is_empty() {
            return Err(Error::InnerMinimization("no grid minimum found".into()));
        }

        let refined: Vec<(Vector, f64)> = candidates
            .iter()
            .map(|&id| {
                let z0 = Vector::from_iterator(dz, nodes[id].iter().enumerate().map(|(k, &g)| axes[k][g]));
                self.refine(&xs, z0)
            })
            .collect();
        let best = refined
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
            .map(|(k, _)| k)
            .expect("non-empty");
        let (zbest, fbest) = refined[best].clone();
        let diam: f64 = (0..dz).map(|k| (zb.upper()[k] - zb.lower()[k]).powi(2)).sum::<f64>().sqrt();
        for (z, f) in &refined {
            let far = (z - &zbest).norm() > 1e-6 * (1.0 + diam);
            if far && *f - fbest < s.separation {
                return Err(Error::InnerMinimization(format!(
                    "minimizer is not unique: z = {:?} and z = {:?} differ in value by {:e}",
                    zbest.as_slice(),
                    z.as_slice(),
                    f - fbest
                )));
            }
        }
        let on_boundary = (0..dz).any(|k| {
            let w = zb.upper()[k] - zb.lower()[k];
            zbest[k] <= zb.lower()[k] + 1e-12 * w || zbest[k] >= zb.upper()[k] - 1e-12 * w
        });
        Ok(InnerSolution { z: zbest, value: fbest, on_boundary })
    }

    /// Inner solution plus `A` and its inverse, checking the interior and definiteness requirements.
    fn interior_solution(&self, x: &ProductConfiguration) -> Result<(Vec<Vector>, Vector, Matrix)> {
        let sol = self.inner_solve(x)?;
        if sol.on_boundary {
            return Err(Error::InnerMinimization(format!(
                "minimizer z = {:?} lies on the boundary of Z; second differentials need an interior minimizer",
                sol.z.as_slice()
            )));
        }
        let xs = Self::xs(x);
        let a = self.a_matrix(&xs, &sol.z);
        let lmin = linalg::min_symmetric_eigenvalue(&a);
        if !(lmin > self.spec.settings.definiteness_tol) {
            return Err(Error::InnerMinimization(format!("A is not positive definite at the minimizer (min eigenvalue {lmin:e})")));
        }
        let a_inv = a.try_inverse().ok_or_else(|| Error::InnerMinimization("A is singular".into()))?;
        Ok((xs, sol.z, a_inv))
    }
}

impl CostFamily for Hedonic {
    fn name(&self) -> &str {
        "hedonic"
    }

    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { analytic_gradient: true, analytic_second: true }
    }

    fn value(&self, x: &ProductConfiguration) -> Result<f64> {
        Ok(self.inner_solve(x)?.value)
    }

    fn gradient(&self, i: usize, x: &ProductConfiguration) -> Result<Vector> {
        let z = self.inner_solve(x)?.z;
        Ok(self.spec.terms[i].grad_x(&linalg::to_vector(x.coord(i)), &z))
    }

    fn second_differential(&self, i: usize, j: usize, x: &ProductConfiguration) -> Result<Matrix> {
        let (xs, z, a_inv) = self.interior_solution(x)?;
        let fi = self.spec.terms[i].hess_xz(&xs[i], &z);
        if i == j {
            Ok(-(&fi * &a_inv * fi.transpose()) + self.spec.terms[i].hess_xx(&xs[i], &z))
        } else {
            let fj = self.spec.terms[j].hess_xz(&xs[j], &z);
            Ok(-(&fi * &a_inv * fj.transpose()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::CostModel;

    fn quadratic_hedonic(m: usize) -> Hedonic {
        Hedonic::new(HedonicSpec {
            z_domain: DomainBox::cube(1, -5.0, 5.0).unwrap(),
            terms: vec![HedonicTerm::squared_distance(1); m],
            settings: InnerSettings::default(),
        })
        .unwrap()
    }

    fn cfg(c: &[f64]) -> ProductConfiguration {
        ProductConfiguration::new(c.iter().map(|v| vec![*v]).collect())
    }

    #[test]
    fn inner_minimizer_is_the_mean() {
        // sum |x_i - z|^2 / 2 is minimized at the mean: z = 1, value (1 + 0 + 1) / 2
        let h = quadratic_hedonic(3);
        let sol = h.inner_solve(&cfg(&[0.0, 1.0, 2.0])).unwrap();
        assert!((sol.z[0] - 1.0).abs() < 1e-12);
        assert!((sol.value - 1.0).abs() < 1e-12);
        assert!(!sol.on_boundary);
    }

    #[test]
    fn envelope_gradient_and_blocks() {
        let c = CostModel::new(quadratic_hedonic(3));
        let x = cfg(&[0.0, 1.0, 2.0]);
        assert!((c.gradient(0, &x).unwrap()[0] + 1.0).abs() < 1e-12);
        // mixed block: -(-1)(1/3)(-1) = -1/3; hessian block: -1/3 + 1 = 2/3
        let mixed = c.second_differential(0, 2, &x).unwrap().matrix[(0, 0)];
        assert!((mixed + 1.0 / 3.0).abs() < 1e-12);
        let hess = c.second_differential(1, 1, &x).unwrap().matrix[(0, 0)];
        assert!((hess - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn flat_inner_objective_is_rejected() {
        let t = HedonicTerm { b: linalg::identity(1), ..HedonicTerm::zero(1, 1) };
        let h = Hedonic::new(HedonicSpec {
            z_domain: DomainBox::cube(1, -1.0, 1.0).unwrap(),
            terms: vec![t.clone(), t],
            settings: InnerSettings::default(),
        })
        .unwrap();
        assert!(matches!(h.inner_solve(&cfg(&[0.2, 0.3])), Err(Error::InnerMinimization(_))));
    }

    #[test]
    fn boundary_minimizer_blocks_second_differentials() {
        let h = Hedonic::new(HedonicSpec {
            z_domain: DomainBox::cube(1, 0.0, 0.5).unwrap(),
            terms: vec![HedonicTerm::squared_distance(1); 2],
            settings: InnerSettings::default(),
        })
        .unwrap();
        let x = cfg(&[2.0, 3.0]);
        assert!(h.inner_solve(&x).unwrap().on_boundary);
        let c = CostModel::new(h);
        assert!(c.gradient(0, &x).is_ok());
        assert!(c.second_differential(0, 1, &x).is_err());
    }

    #[test]
    fn double_well_picks_the_deeper_minimum() {
        // lambda(z) = quartic/4 z^4 - z^2/2 + 0.1 z has two wells; the tilt breaks the tie
        let mut t = HedonicTerm::zero(1, 1);
        t.l = Matrix::from_element(1, 1, -1.0);
        t.quartic = 1.0;
        t.ll = Vector::from_element(1, 0.1);
        let h = Hedonic::new(HedonicSpec {
            z_domain: DomainBox::cube(1, -2.0, 2.0).unwrap(),
            terms: vec![t, HedonicTerm::zero(1, 1)],
            settings: InnerSettings::default(),
        })
        .unwrap();
        let sol = h.inner_solve(&cfg(&[0.0, 0.0])).unwrap();
        assert!(sol.z[0] < 0.0);
        let grad = sol.z[0].powi(3) - sol.z[0] + 0.1;
        assert!(grad.abs() < 1e-12);
    }
}
