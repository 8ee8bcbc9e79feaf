//! Cost functions `c(x_0, ..., x_{m-1})` and their differentials.
//!
//! A [`CostModel`] wraps a [`CostFamily`] implementation. Families may supply
//! analytic gradients and second differentials; anything missing is filled in
//! by central finite differences. [`CostModel::finite_difference`] forces the
//! finite-difference path, which is what the consistency checks compare
//! against.
//!
//! Second differentials are returned as `dims[i] x dims[j]` matrices with
//! rows indexed by coordinates of `x_i`:
//! `block[(a, b)] = d^2 c / dx_i^a dx_j^b`.

mod families;
mod hedonic;
mod spec;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::geometry::ProductConfiguration;
use crate::linalg::{Matrix, Vector};
use crate::{Error, Result};

pub use families::{Bilinear, ConcaveOfSum, ConcaveProfile, GPlusQuadratic, GTerm, Perturbation};
pub use hedonic::{Hedonic, HedonicSpec, HedonicTerm, InnerSettings, InnerSolution};
pub use spec::{builtin_cost, CostSpec, FAMILIES};

/// Which differentials a family computes in closed form.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Capabilities {
    pub analytic_gradient: bool,
    pub analytic_second: bool,
}

/// A cost function on a product of Euclidean domains.
///
/// This is also the host-language hook for user-defined costs: implement
/// `value` and optionally the differentials.
pub trait CostFamily: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Dimension of each factor.
    fn dims(&self) -> &[usize];

    fn value(&self, x: &ProductConfiguration) -> Result<f64>;

    fn capabilities(&self) -> Capabilities {
        Capabilities::default()
    }

    /// `D_{x_i} c`. Only called when `capabilities().analytic_gradient`.
    fn gradient(&self, _i: usize, _x: &ProductConfiguration) -> Result<Vector> {
        Err(Error::InvalidParameter(format!("{} has no analytic gradient", self.name())))
    }

    /// `D^2_{x_i x_j} c`. Only called when `capabilities().analytic_second`.
    fn second_differential(&self, _i: usize, _j: usize, _x: &ProductConfiguration) -> Result<Matrix> {
        Err(Error::InvalidParameter(format!("{} has no analytic second differential", self.name())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Mixed,
    Hessian,
}

/// One block `D^2_{x_i x_j} c` (mixed) or `Hess_{x_i} c` (when `i == j`).
#[derive(Debug, Clone, PartialEq)]
pub struct DifferentialBlock {
    pub i: usize,
    pub j: usize,
    pub matrix: Matrix,
    pub kind: BlockKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Analytic,
    FiniteDifference,
}

#[derive(Clone)]
pub struct CostModel {
    family: Arc<dyn CostFamily>,
    mode: Mode,
}

impl fmt::Debug for CostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostModel")
            .field("family", &self.family.name())
            .field("dims", &self.family.dims())
            .field("mode", &self.mode)
            .finish()
    }
}

impl CostModel {
    pub fn new<F: CostFamily + 'static>(family: F) -> Self {
        Self { family: Arc::new(family), mode: Mode::Analytic }
    }

    pub fn from_arc(family: Arc<dyn CostFamily>) -> Self {
        Self { family, mode: Mode::Analytic }
    }

    /// Cost given by a closure; every differential is a finite difference.
    pub fn from_fn<F>(name: &str, dims: Vec<usize>, f: F) -> Self
    where
        F: Fn(&ProductConfiguration) -> f64 + Send + Sync + 'static,
    {
        Self::new(CallbackCost { name: name.to_string(), dims, f: Box::new(f) })
    }

    pub fn family(&self) -> &Arc<dyn CostFamily> {
        &self.family
    }

    pub fn name(&self) -> &str {
        self.family.name()
    }

    pub fn dims(&self) -> &[usize] {
        self.family.dims()
    }

    pub fn marginal_count(&self) -> usize {
        self.family.dims().len()
    }

    /// Capabilities actually in effect (none on the finite-difference path).
    pub fn capabilities(&self) -> Capabilities {
        match self.mode {
            Mode::Analytic => self.family.capabilities(),
            Mode::FiniteDifference => Capabilities {
                analytic_gradient: self.family.capabilities().analytic_gradient,
                analytic_second: false,
            },
        }
    }

    /// Copy of this model whose second differentials come from finite differences.
    ///
    /// The gradient stays analytic when the family has one: second blocks are
    /// central differences of the gradient. Families without a gradient use
    /// second differences of values.
    pub fn finite_difference(&self) -> Self {
        Self { family: Arc::clone(&self.family), mode: Mode::FiniteDifference }
    }

    pub fn is_finite_difference(&self) -> bool {
        self.mode == Mode::FiniteDifference
    }

    pub fn check_config(&self, x: &ProductConfiguration) -> Result<()> {
        let dims = self.dims();
        if x.marginal_count() != dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "configuration has {} factors, cost expects {}",
                x.marginal_count(),
                dims.len()
            )));
        }
        for (i, (c, &d)) in x.coords().iter().zip(dims).enumerate() {
            if c.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "factor {i} has {} coordinates, cost expects {d}",
                    c.len()
                )));
            }
        }
        Ok(())
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.marginal_count() {
            return Err(Error::DimensionMismatch(format!(
                "marginal index {i} out of range for m = {}",
                self.marginal_count()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &ProductConfiguration) -> Result<f64> {
        self.check_config(x)?;
        let v = self.family.value(x)?;
        if !v.is_finite() {
            return Err(Error::InvalidParameter(format!("{} is not finite at {:?}", self.name(), x.coords())));
        }
        Ok(v)
    }

    pub fn gradient(&self, i: usize, x: &ProductConfiguration) -> Result<Vector> {
        self.check_config(x)?;
        self.check_index(i)?;
        if self.family.capabilities().analytic_gradient {
            self.family.gradient(i, x)
        } else {
            fd_gradient(&*self.family, i, x)
        }
    }

    pub fn second_differential(&self, i: usize, j: usize, x: &ProductConfiguration) -> Result<DifferentialBlock> {
        self.check_config(x)?;
        self.check_index(i)?;
        self.check_index(j)?;
        let matrix = if self.mode == Mode::Analytic && self.family.capabilities().analytic_second {
            self.family.second_differential(i, j, x)?
        } else {
            return self.fd_second_differential(i, j, x);
        };
        Ok(block(i, j, matrix))
    }

    /// Finite-difference second differential regardless of mode.
    pub fn fd_second_differential(&self, i: usize, j: usize, x: &ProductConfiguration) -> Result<DifferentialBlock> {
        self.check_config(x)?;
        self.check_index(i)?;
        self.check_index(j)?;
        let matrix = if self.family.capabilities().analytic_gradient {
            fd_second_from_gradient(&*self.family, i, j, x)?
        } else {
            fd_second_from_values(&*self.family, i, j, x)?
        };
        Ok(block(i, j, matrix))
    }
}

fn block(i: usize, j: usize, mut matrix: Matrix) -> DifferentialBlock {
    let kind = if i == j {
        matrix = crate::linalg::symmetric_part(&matrix);
        BlockKind::Hessian
    } else {
        BlockKind::Mixed
    };
    DifferentialBlock { i, j, matrix, kind }
}

/// `cbrt(eps) * (1 + |x|)`: central first differences.
pub fn fd_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * (1.0 + x.abs())
}

/// `eps^(1/4) * (1 + |x|)`: central second differences of values.
fn fd_step_second(x: f64) -> f64 {
    f64::EPSILON.powf(0.25) * (1.0 + x.abs())
}

fn shifted(x: &ProductConfiguration, i: usize, a: usize, h: f64) -> ProductConfiguration {
    let mut y = x.clone();
    y.coord_mut(i)[a] += h;
    y
}

fn fd_gradient(f: &dyn CostFamily, i: usize, x: &ProductConfiguration) -> Result<Vector> {
    let n = x.coord(i).len();
    let mut g = Vector::zeros(n);
    for a in 0..n {
        let h = fd_step(x.coord(i)[a]);
        let plus = f.value(&shifted(x, i, a, h))?;
        let minus = f.value(&shifted(x, i, a, -h))?;
        g[a] = (plus - minus) / (2.0 * h);
    }
    Ok(g)
}

fn fd_second_from_gradient(f: &dyn CostFamily, i: usize, j: usize, x: &ProductConfiguration) -> Result<Matrix> {
    let (ni, nj) = (x.coord(i).len(), x.coord(j).len());
    let mut out = Matrix::zeros(ni, nj);
    for b in 0..nj {
        let h = fd_step(x.coord(j)[b]);
        let plus = f.gradient(i, &shifted(x, j, b, h))?;
        let minus = f.gradient(i, &shifted(x, j, b, -h))?;
        out.set_column(b, &((plus - minus) / (2.0 * h)));
    }
    Ok(out)
}

fn fd_second_from_values(f: &dyn CostFamily, i: usize, j: usize, x: &ProductConfiguration) -> Result<Matrix> {
    let (ni, nj) = (x.coord(i).len(), x.coord(j).len());
    let mut out = Matrix::zeros(ni, nj);
    let center = f.value(x)?;
    for a in 0..ni {
        for b in 0..nj {
            let ha = fd_step_second(x.coord(i)[a]);
            if i == j && a == b {
                let plus = f.value(&shifted(x, i, a, ha))?;
                let minus = f.value(&shifted(x, i, a, -ha))?;
                out[(a, b)] = (plus - 2.0 * center + minus) / (ha * ha);
            } else {
                let hb = fd_step_second(x.coord(j)[b]);
                let at = |sa: f64, sb: f64| f.value(&shifted(&shifted(x, i, a, sa * ha), j, b, sb * hb));
                out[(a, b)] = (at(1.0, 1.0)? - at(1.0, -1.0)? - at(-1.0, 1.0)? + at(-1.0, -1.0)?) / (4.0 * ha * hb);
            }
        }
    }
    Ok(out)
}

struct CallbackCost {
    name: String,
    dims: Vec<usize>,
    #[allow(clippy::type_complexity)]
    f: Box<dyn Fn(&ProductConfiguration) -> f64 + Send + Sync>,
}

impl fmt::Debug for CallbackCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CallbackCost").field("name", &self.name).field("dims", &self.dims).finish()
    }
}

impl CostFamily for CallbackCost {
    fn name(&self) -> &str {
        &self.name
    }

    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn value(&self, x: &ProductConfiguration) -> Result<f64> {
        Ok((self.f)(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(c: &[&[f64]]) -> ProductConfiguration {
        ProductConfiguration::new(c.iter().map(|v| v.to_vec()).collect())
    }

    #[test]
    fn callback_cost_uses_finite_differences() {
        // c = x0 * x1^2 ; d/dx0 = x1^2, d2/dx0dx1 = 2 x1, d2/dx1^2 = 2 x0
        let c = CostModel::from_fn("poly", vec![1, 1], |x| x.coord(0)[0] * x.coord(1)[0].powi(2));
        let x = cfg(&[&[0.7], &[-1.3]]);
        assert!((c.gradient(0, &x).unwrap()[0] - 1.69).abs() < 1e-9);
        let mixed = c.second_differential(0, 1, &x).unwrap();
        assert_eq!(mixed.kind, BlockKind::Mixed);
        assert!((mixed.matrix[(0, 0)] + 2.6).abs() < 1e-6);
        let hess = c.second_differential(1, 1, &x).unwrap();
        assert_eq!(hess.kind, BlockKind::Hessian);
        assert!((hess.matrix[(0, 0)] - 1.4).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let c = CostModel::from_fn("zero", vec![1, 2], |_| 0.0);
        assert!(matches!(c.eval(&cfg(&[&[0.0], &[0.0]])), Err(Error::DimensionMismatch(_))));
        assert!(matches!(c.eval(&cfg(&[&[0.0]])), Err(Error::DimensionMismatch(_))));
        assert!(matches!(c.gradient(5, &cfg(&[&[0.0], &[0.0, 0.0]])), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let c = CostModel::from_fn("log", vec![1], |x| x.coord(0)[0].ln());
        assert!(c.eval(&cfg(&[&[-1.0]])).is_err());
    }
}
