//! Closed-form cost families: concave functions of the sum (optionally
//! perturbed), bilinear costs, and the three-marginal `g + quadratic` cost.

use crate::geometry::ProductConfiguration;
use crate::linalg::{self, Matrix, Vector};
use crate::{Error, Result};

use super::{Capabilities, CostFamily, CostModel};

/// Strictly concave `h: R^n -> R` applied to `s = x_0 + ... + x_{m-1}`.
#[derive(Debug, Clone)]
pub enum ConcaveProfile {
    /// `h(s) = -s^T q s` with `q` symmetric positive definite. `q = I` gives `-|s|^2`.
    Quadratic { q: Matrix },
    /// `h(s) = -sum_k cosh(scale * s_k) / scale^2`.
    Cosh { scale: f64 },
}

impl ConcaveProfile {
    fn validate(&self, n: usize) -> Result<()> {
        match self {
            ConcaveProfile::Quadratic { q } => {
                if q.nrows() != n || q.ncols() != n {
                    return Err(Error::InvalidParameter(format!("q must be {n}x{n}")));
                }
                if linalg::max_abs(&(q - q.transpose())) > 1e-12 * (1.0 + linalg::max_abs(q)) {
                    return Err(Error::InvalidParameter("q must be symmetric".into()));
                }
                if linalg::min_symmetric_eigenvalue(q) <= 0.0 {
                    return Err(Error::InvalidParameter("q must be positive definite".into()));
                }
            }
            ConcaveProfile::Cosh { scale } => {
                if !(*scale > 0.0) || !scale.is_finite() {
                    return Err(Error::InvalidParameter("cosh scale must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, s: &Vector) -> f64 {
        match self {
            ConcaveProfile::Quadratic { q } => -(s.transpose() * q * s)[(0, 0)],
            ConcaveProfile::Cosh { scale } => -s.iter().map(|v| (scale * v).cosh()).sum::<f64>() / (scale * scale),
        }
    }

    pub fn gradient(&self, s: &Vector) -> Vector {
        match self {
            ConcaveProfile::Quadratic { q } => -(q * s) * 2.0,
            ConcaveProfile::Cosh { scale } => s.map(|v| -(scale * v).sinh() / scale),
        }
    }

    pub fn hessian(&self, s: &Vector) -> Matrix {
        match self {
            ConcaveProfile::Quadratic { q } => -q * 2.0,
            ConcaveProfile::Cosh { scale } => Matrix::from_diagonal(&s.map(|v| -(scale * v).cosh())),
        }
    }
}

/// Additive C^2 term used by the perturbed concave-of-sum family.
#[derive(Debug, Clone)]
pub enum Perturbation {
    /// `p(x) = sum_{i<j} sin(x_i . x_j)`.
    SinDot,
    /// Any other cost on the same factors.
    Cost(CostModel),
}

impl Perturbation {
    fn capabilities(&self) -> Capabilities {
        match self {
            Perturbation::SinDot => Capabilities { analytic_gradient: true, analytic_second: true },
            Perturbation::Cost(c) => c.capabilities(),
        }
    }

    fn value(&self, x: &ProductConfiguration) -> Result<f64> {
        match self {
            Perturbation::SinDot => {
                let m = x.marginal_count();
                let mut total = 0.0;
                for i in 0..m {
                    for j in i + 1..m {
                        total += dot(x.coord(i), x.coord(j)).sin();
                    }
                }
                Ok(total)
            }
            Perturbation::Cost(c) => c.eval(x),
        }
    }

    fn gradient(&self, i: usize, x: &ProductConfiguration) -> Result<Vector> {
        match self {
            Perturbation::SinDot => {
                let mut g = Vector::zeros(x.coord(i).len());
                for j in (0..x.marginal_count()).filter(|&j| j != i) {
                    let d = dot(x.coord(i), x.coord(j));
                    g += linalg::to_vector(x.coord(j)) * d.cos();
                }
                Ok(g)
            }
            Perturbation::Cost(c) => c.gradient(i, x),
        }
    }

    fn second(&self, i: usize, j: usize, x: &ProductConfiguration) -> Result<Matrix> {
        match self {
            Perturbation::SinDot => {
                let n = x.coord(i).len();
                if i == j {
                    let mut h = Matrix::zeros(n, n);
                    for k in (0..x.marginal_count()).filter(|&k| k != i) {
                        let xk = linalg::to_vector(x.coord(k));
                        h -= &xk * xk.transpose() * dot(x.coord(i), x.coord(k)).sin();
                    }
                    Ok(h)
                } else {
                    let d = dot(x.coord(i), x.coord(j));
                    let xi = linalg::to_vector(x.coord(i));
                    let xj = linalg::to_vector(x.coord(j));
                    Ok(linalg::identity(n) * d.cos() - xj * xi.transpose() * d.sin())
                }
            }
            Perturbation::Cost(c) => Ok(c.second_differential(i, j, x)?.matrix),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sum_of(x: &ProductConfiguration) -> Vector {
    let mut s = Vector::zeros(x.coord(0).len());
    for c in x.coords() {
        s += linalg::to_vector(c);
    }
    s
}

/// `c(x) = h(sum_k x_k) + eps * p(x)`.
#[derive(Debug, Clone)]
pub struct ConcaveOfSum {
    name: String,
    dims: Vec<usize>,
    profile: ConcaveProfile,
    perturbation: Option<(f64, Perturbation)>,
}

impl ConcaveOfSum {
    pub fn new(m: usize, n: usize, profile: ConcaveProfile) -> Result<Self> {
        if m < 2 || n == 0 {
            return Err(Error::InvalidParameter("concave_of_sum needs m >= 2 and n >= 1".into()));
        }
        profile.validate(n)?;
        Ok(Self { name: "concave_of_sum".into(), dims: vec![n; m], profile, perturbation: None })
    }

    /// `h = -|s|^2` on `(R^n)^m`.
    pub fn negative_squared_norm(m: usize, n: usize) -> Result<Self> {
        Self::new(m, n, ConcaveProfile::Quadratic { q: linalg::identity(n) })
    }

    pub fn perturbed(mut self, epsilon: f64, perturbation: Perturbation) -> Result<Self> {
        if !epsilon.is_finite() {
            return Err(Error::InvalidParameter("perturbation scale must be finite".into()));
        }
        if let Perturbation::Cost(c) = &perturbation {
            if c.dims() != self.dims.as_slice() {
                return Err(Error::DimensionMismatch("perturbation dims differ from the base cost".into()));
            }
        }
        self.name = "concave_of_sum_perturbed".into();
        self.perturbation = Some((epsilon, perturbation));
        Ok(self)
    }

    pub fn profile(&self) -> &ConcaveProfile {
        &self.profile
    }
}

impl CostFamily for ConcaveOfSum {
    fn name(&self) -> &str {
        &self.name
    }

    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn capabilities(&self) -> Capabilities {
        match &self.perturbation {
            None => Capabilities { analytic_gradient: true, analytic_second: true },
            Some((_, p)) => p.capabilities(),
        }
    }

    fn value(&self, x: &ProductConfiguration) -> Result<f64> {
        let mut v = self.profile.value(&sum_of(x));
        if let Some((eps, p)) = &self.perturbation {
            v += eps * p.value(x)?;
        }
        Ok(v)
    }

    fn gradient(&self, i: usize, x: &ProductConfiguration) -> Result<Vector> {
        let mut g = self.profile.gradient(&sum_of(x));
        if let Some((eps, p)) = &self.perturbation {
            g += p.gradient(i, x)? * *eps;
        }
        Ok(g)
    }

    fn second_differential(&self, i: usize, j: usize, x: &ProductConfiguration) -> Result<Matrix> {
        let mut h = self.profile.hessian(&sum_of(x));
        if let Some((eps, p)) = &self.perturbation {
            h += p.second(i, j, x)? * *eps;
        }
        Ok(h)
    }
}

/// `c(x) = sum_{i<j} x_i^T A_ij x_j`.
///
/// Terms supplied as `(j, i)` with `j > i` are folded into `A_ij` as transposes.
#[derive(Debug, Clone)]
pub struct Bilinear {
    dims: Vec<usize>,
    // upper triangle, blocks[i][j] for i < j
    blocks: Vec<Vec<Matrix>>,
}

impl Bilinear {
    pub fn new(dims: Vec<usize>, terms: Vec<(usize, usize, Matrix)>) -> Result<Self> {
        let m = dims.len();
        if m < 2 || dims.contains(&0) {
            return Err(Error::InvalidParameter("bilinear needs m >= 2 positive dims".into()));
        }
        let mut blocks: Vec<Vec<Matrix>> =
            (0..m).map(|i| (0..m).map(|j| Matrix::zeros(dims[i], dims[j])).collect()).collect();
        for (i, j, a) in terms {
            if i >= m || j >= m || i == j {
                return Err(Error::InvalidParameter(format!("bilinear term ({i}, {j}) is not an off-diagonal pair")));
            }
            if a.nrows() != dims[i] || a.ncols() != dims[j] {
                return Err(Error::InvalidParameter(format!(
                    "A_{i}{j} must be {}x{}, got {}x{}",
                    dims[i],
                    dims[j],
                    a.nrows(),
                    a.ncols()
                )));
            }
            if i < j {
                blocks[i][j] += a;
            } else {
                blocks[j][i] += a.transpose();
            }
        }
        Ok(Self { dims, blocks })
    }

    /// Three-marginal normal form `x_0 . x_1 + x_0 . x_2 + x_1^T A x_2`.
    pub fn normal_form(a: Matrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidParameter("normal-form A must be square".into()));
        }
        Self::new(vec![n; 3], vec![(0, 1, linalg::identity(n)), (0, 2, linalg::identity(n)), (1, 2, a)])
    }

    /// Folded block `A_ij`, `i < j`.
    pub fn block(&self, i: usize, j: usize) -> &Matrix {
        &self.blocks[i][j]
    }
}

impl CostFamily for Bilinear {
    fn name(&self) -> &str {
        "bilinear"
    }

    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { analytic_gradient: true, analytic_second: true }
    }

    fn value(&self, x: &ProductConfiguration) -> Result<f64> {
        let m = self.dims.len();
        let mut v = 0.0;
        for i in 0..m {
            let xi = linalg::to_vector(x.coord(i));
            for j in i + 1..m {
                v += (xi.transpose() * &self.blocks[i][j] * linalg::to_vector(x.coord(j)))[(0, 0)];
            }
        }
        Ok(v)
    }

    fn gradient(&self, i: usize, x: &ProductConfiguration) -> Result<Vector> {
        let mut g = Vector::zeros(self.dims[i]);
        for j in 0..self.dims.len() {
            let xj = linalg::to_vector(x.coord(j));
            if j > i {
                g += &self.blocks[i][j] * xj;
            } else if j < i {
                g += self.blocks[j][i].transpose() * xj;
            }
        }
        Ok(g)
    }

    fn second_differential(&self, i: usize, j: usize, _x: &ProductConfiguration) -> Result<Matrix> {
        Ok(match i.cmp(&j) {
            std::cmp::Ordering::Less => self.blocks[i][j].clone(),
            std::cmp::Ordering::Greater => self.blocks[j][i].transpose(),
            std::cmp::Ordering::Equal => Matrix::zeros(self.dims[i], self.dims[i]),
        })
    }
}

/// The `g` part of `c(x_0, x_1, x_2) = g(x_0, x_2) + |x_0 - x_1|^2/2 + |x_2 - x_1|^2/2`.
#[derive(Debug, Clone)]
pub enum GTerm {
    /// `g = (x_0 - x_2)^T q (x_0 - x_2) / 2`, `q` symmetric positive definite.
    ConvexDifference { q: Matrix },
    /// `g = -(x_0 + x_2)^T q (x_0 + x_2) / 2`, `q` symmetric positive definite.
    ConcaveSum { q: Matrix },
    /// `g = sum_k cosh(scale * (x_0 - x_2)_k) / scale^2`.
    CoshDifference { scale: f64 },
}

impl GTerm {
    fn sign(&self) -> f64 {
        match self {
            GTerm::ConcaveSum { .. } => 1.0,
            _ => -1.0,
        }
    }

    // argument w = x_0 + sign * x_2
    fn arg(&self, x: &ProductConfiguration) -> Vector {
        linalg::to_vector(x.coord(0)) + linalg::to_vector(x.coord(2)) * self.sign()
    }

    fn h(&self, w: &Vector) -> f64 {
        match self {
            GTerm::ConvexDifference { q } => 0.5 * (w.transpose() * q * w)[(0, 0)],
            GTerm::ConcaveSum { q } => -0.5 * (w.transpose() * q * w)[(0, 0)],
            GTerm::CoshDifference { scale } => w.iter().map(|v| (scale * v).cosh()).sum::<f64>() / (scale * scale),
        }
    }

    fn dh(&self, w: &Vector) -> Vector {
        match self {
            GTerm::ConvexDifference { q } => q * w,
            GTerm::ConcaveSum { q } => -(q * w),
            GTerm::CoshDifference { scale } => w.map(|v| (scale * v).sinh() / scale),
        }
    }

    fn d2h(&self, w: &Vector) -> Matrix {
        match self {
            GTerm::ConvexDifference { q } => q.clone(),
            GTerm::ConcaveSum { q } => -q,
            GTerm::CoshDifference { scale } => Matrix::from_diagonal(&w.map(|v| (scale * v).cosh())),
        }
    }

    /// `D^2_{x_0 x_2} g` at the given configuration.
    pub fn mixed(&self, x: &ProductConfiguration) -> Matrix {
        self.d2h(&self.arg(x)) * self.sign()
    }
}

#[derive(Debug, Clone)]
pub struct GPlusQuadratic {
    dims: Vec<usize>,
    g: GTerm,
}

impl GPlusQuadratic {
    pub fn new(n: usize, g: GTerm) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        match &g {
            GTerm::ConvexDifference { q } | GTerm::ConcaveSum { q } => {
                ConcaveProfile::Quadratic { q: q.clone() }.validate(n)?;
            }
            GTerm::CoshDifference { scale } => ConcaveProfile::Cosh { scale: *scale }.validate(n)?,
        }
        Ok(Self { dims: vec![n; 3], g })
    }

    pub fn g(&self) -> &GTerm {
        &self.g
    }
}

impl CostFamily for GPlusQuadratic {
    fn name(&self) -> &str {
        "g_plus_quadratic"
    }

    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { analytic_gradient: true, analytic_second: true }
    }

    fn value(&self, x: &ProductConfiguration) -> Result<f64> {
        let x0 = linalg::to_vector(x.coord(0));
        let x1 = linalg::to_vector(x.coord(1));
        let x2 = linalg::to_vector(x.coord(2));
        Ok(self.g.h(&self.g.arg(x)) + 0.5 * (&x0 - &x1).norm_squared() + 0.5 * (&x2 - &x1).norm_squared())
    }

    fn gradient(&self, i: usize, x: &ProductConfiguration) -> Result<Vector> {
        let x0 = linalg::to_vector(x.coord(0));
        let x1 = linalg::to_vector(x.coord(1));
        let x2 = linalg::to_vector(x.coord(2));
        let dh = self.g.dh(&self.g.arg(x));
        Ok(match i {
            0 => dh + (&x0 - &x1),
            1 => (&x1 - &x0) + (&x1 - &x2),
            _ => dh * self.g.sign() + (&x2 - &x1),
        })
    }

    fn second_differential(&self, i: usize, j: usize, x: &ProductConfiguration) -> Result<Matrix> {
        let n = self.dims[0];
        let eye = linalg::identity(n);
        let d2 = self.g.d2h(&self.g.arg(x));
        let s = self.g.sign();
        Ok(match (i.min(j), i.max(j)) {
            (0, 0) => d2 + eye,
            (2, 2) => d2 + eye,
            (1, 1) => eye * 2.0,
            (0, 1) | (1, 2) => -eye,
            (0, 2) => {
                let b = d2 * s;
                if i == 0 {
                    b
                } else {
                    b.transpose()
                }
            }
            _ => unreachable!("three factors"),
        })
    }
}
