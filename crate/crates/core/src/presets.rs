//! Ready-made instances for the builtin cost families plus a negative control.
//!
//! Every preset lives on unit boxes `[0, 1]^dim`.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::costs::{CostModel, CostSpec};
use crate::geometry::{dirichlet_marginal, uniform_marginal, DiscreteMarginal, DomainBox};
use crate::linalg::{to_rows, Matrix};
use crate::solver::Instance;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `-|x_0 + ... + x_{m-1}|^2`.
    Gs,
    /// Bilinear normal form with `A = -I + 0.3 * skew`, `T` negative definite.
    BilinearNeg,
    /// Bilinear normal form with `A = I`, `T` positive definite.
    BilinearPos,
    /// `g(x_0, x_2) + |x_0 - x_1|^2/2 + |x_2 - x_1|^2/2` with `g` a convex quadratic of `x_0 - x_2`.
    Gq,
    /// Hedonic cost with affine-in-`z` couplings and quadratic parts.
    Hedonic,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Gs, Preset::BilinearNeg, Preset::BilinearPos, Preset::Gq, Preset::Hedonic];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Gs => "gs",
            Preset::BilinearNeg => "bilinear-neg",
            Preset::BilinearPos => "bilinear-pos",
            Preset::Gq => "gq",
            Preset::Hedonic => "hedonic",
        }
    }

    /// Whether `m` is free (otherwise the preset is three-marginal).
    pub fn any_m(self) -> bool {
        matches!(self, Preset::Gs | Preset::Hedonic)
    }

    pub fn cost_spec(self, m: usize, dim: usize) -> Result<CostSpec> {
        if m < 3 || (!self.any_m() && m != 3) {
            return Err(Error::InvalidParameter(format!("preset {} does not support m = {m}", self.name())));
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dim must be positive".into()));
        }
        let (family, params) = match self {
            Preset::Gs => ("concave_of_sum", json!({"profile": "quadratic", "q": to_rows(&Matrix::identity(dim, dim))})),
            Preset::BilinearNeg => ("bilinear", json!({"normal_form": to_rows(&bilinear_neg_matrix(dim))})),
            Preset::BilinearPos => ("bilinear", json!({"normal_form": to_rows(&Matrix::identity(dim, dim))})),
            Preset::Gq => ("g_plus_quadratic", json!({"g": "convex_difference", "q": to_rows(&gq_matrix(dim))})),
            Preset::Hedonic => {
                let terms: Vec<_> = (0..m)
                    .map(|i| {
                        let p = Matrix::identity(dim, dim) * (1.0 + 0.25 * i as f64);
                        json!({
                            "p": to_rows(&p),
                            "b": to_rows(&Matrix::identity(dim, dim)),
                            "l": to_rows(&Matrix::identity(dim, dim)),
                        })
                    })
                    .collect();
                ("hedonic", json!({"z_lower": vec![-5.0; dim], "z_upper": vec![5.0; dim], "terms": terms}))
            }
        };
        Ok(CostSpec { family: family.into(), m, dims: vec![dim; m], params })
    }

    pub fn cost(self, m: usize, dim: usize) -> Result<CostModel> {
        self.cost_spec(m, dim)?.build()
    }

    pub fn domains(self, m: usize, dim: usize) -> Result<Vec<DomainBox>> {
        (0..m).map(|_| DomainBox::unit(dim)).collect()
    }
}

/// `-I` plus `0.3` on the superdiagonal and `-0.3` on the subdiagonal.
pub fn bilinear_neg_matrix(dim: usize) -> Matrix {
    Matrix::from_fn(dim, dim, |r, c| {
        if r == c {
            -1.0
        } else if c == r + 1 {
            0.3
        } else if r == c + 1 {
            -0.3
        } else {
            0.0
        }
    })
}

/// Diagonal `(2, 1, 1, ..)` with `0.5` in the leading off-diagonal pair.
pub fn gq_matrix(dim: usize) -> Matrix {
    Matrix::from_fn(dim, dim, |r, c| match (r, c) {
        (0, 0) => 2.0,
        (r, c) if r == c => 1.0,
        (0, 1) | (1, 0) => 0.5,
        _ => 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    #[default]
    Uniform,
    Dirichlet,
}

/// `m` marginals of `n` atoms on the preset's boxes; marginal `i` uses seed stream `seed * 1000 + i`.
pub fn marginals(preset: Preset, m: usize, n: usize, dim: usize, seed: u64, weights: WeightKind) -> Result<Vec<DiscreteMarginal>> {
    preset
        .domains(m, dim)?
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let s = seed.wrapping_mul(1000).wrapping_add(i as u64);
            match weights {
                WeightKind::Uniform => uniform_marginal(d, n, s),
                WeightKind::Dirichlet => dirichlet_marginal(d, n, s),
            }
        })
        .collect()
}

pub fn instance(preset: Preset, m: usize, n: usize, dim: usize, seed: u64, weights: WeightKind) -> Result<Instance> {
    Instance::new(marginals(preset, m, n, dim, seed, weights)?, preset.cost(m, dim)?)
}
