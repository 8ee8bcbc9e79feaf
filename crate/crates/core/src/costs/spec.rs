//! JSON cost specifications: `{"family": ..., "m": ..., "dims": [...], "params": {...}}`.
//!
//! Matrices are given either as nested rows or as a flat row-major list.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::geometry::DomainBox;
use crate::linalg::{self, Matrix, Vector};
use crate::{Error, Result};

use super::families::{Bilinear, ConcaveOfSum, ConcaveProfile, GPlusQuadratic, GTerm, Perturbation};
use super::hedonic::{Hedonic, HedonicSpec, HedonicTerm, InnerSettings};
use super::CostModel;

pub const FAMILIES: [&str; 5] = ["concave_of_sum", "concave_of_sum_perturbed", "bilinear", "g_plus_quadratic", "hedonic"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub family: String,
    pub m: usize,
    pub dims: Vec<usize>,
    #[serde(default = "empty_object")]
    pub params: Value,
}

fn empty_object() -> Value {
    json!({})
}

impl CostSpec {
    pub fn build(&self) -> Result<CostModel> {
        builtin_cost(&self.family, self.m, &self.dims, &self.params)
    }
}

/// Construct one of the builtin families.
pub fn builtin_cost(family: &str, m: usize, dims: &[usize], params: &Value) -> Result<CostModel> {
    if dims.len() != m {
        return Err(Error::InvalidParameter(format!("dims has {} entries, m = {m}", dims.len())));
    }
    if m < 2 || dims.contains(&0) {
        return Err(Error::InvalidParameter("need m >= 2 and positive dims".into()));
    }
    match family {
        "concave_of_sum" | "concave_of_sum_perturbed" => {
            let n = equal_dims(family, dims)?;
            let profile = match params.get("profile").and_then(Value::as_str).unwrap_or("quadratic") {
                "quadratic" => ConcaveProfile::Quadratic { q: matrix_or(params, "q", n, n, linalg::identity(n))? },
                "cosh" => ConcaveProfile::Cosh { scale: number_or(params, "scale", 1.0)? },
                other => return Err(Error::InvalidParameter(format!("unknown concave profile `{other}`"))),
            };
            let base = ConcaveOfSum::new(m, n, profile)?;
            if family == "concave_of_sum" {
                return Ok(CostModel::new(base));
            }
            let epsilon = number_or(params, "epsilon", 0.0)?;
            let perturbation = match params.get("perturbation").and_then(Value::as_str).unwrap_or("sin_dot") {
                "sin_dot" => Perturbation::SinDot,
                other => return Err(Error::InvalidParameter(format!("unknown perturbation `{other}`"))),
            };
            Ok(CostModel::new(base.perturbed(epsilon, perturbation)?))
        }
        "bilinear" => {
            if let Some(a) = params.get("normal_form") {
                if m != 3 {
                    return Err(Error::InvalidParameter("normal_form needs m = 3".into()));
                }
                let n = equal_dims(family, dims)?;
                return Ok(CostModel::new(Bilinear::normal_form(linalg::matrix_from_json(a, n, n)?)?));
            }
            let mut terms = Vec::new();
            for t in params.get("terms").and_then(Value::as_array).cloned().unwrap_or_default() {
                let i = index(&t, "i", m)?;
                let j = index(&t, "j", m)?;
                let a = t.get("matrix").ok_or_else(|| Error::InvalidParameter("bilinear term without matrix".into()))?;
                terms.push((i, j, linalg::matrix_from_json(a, dims[i], dims[j])?));
            }
            Ok(CostModel::new(Bilinear::new(dims.to_vec(), terms)?))
        }
        "g_plus_quadratic" => {
            if m != 3 {
                return Err(Error::InvalidParameter("g_plus_quadratic is a three-marginal cost".into()));
            }
            let n = equal_dims(family, dims)?;
            let g = match params.get("g").and_then(Value::as_str).unwrap_or("convex_difference") {
                "convex_difference" => GTerm::ConvexDifference { q: matrix_or(params, "q", n, n, linalg::identity(n))? },
                "concave_sum" => GTerm::ConcaveSum { q: matrix_or(params, "q", n, n, linalg::identity(n))? },
                "cosh_difference" => GTerm::CoshDifference { scale: number_or(params, "scale", 1.0)? },
                other => return Err(Error::InvalidParameter(format!("unknown g term `{other}`"))),
            };
            Ok(CostModel::new(GPlusQuadratic::new(n, g)?))
        }
        "hedonic" => Ok(CostModel::new(Hedonic::new(hedonic_spec(m, dims, params)?)?)),
        other => Err(Error::UnknownFamily(other.to_string())),
    }
}

fn hedonic_spec(m: usize, dims: &[usize], params: &Value) -> Result<HedonicSpec> {
    let lower = vector_field(params, "z_lower")?;
    let upper = vector_field(params, "z_upper")?;
    let z_domain = DomainBox::new(lower, upper)?;
    let dz = z_domain.dim();
    let terms_json = params
        .get("terms")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidParameter("hedonic needs a `terms` list".into()))?;
    if terms_json.len() != m {
        return Err(Error::InvalidParameter(format!("hedonic has {} terms, m = {m}", terms_json.len())));
    }
    let mut terms = Vec::with_capacity(m);
    for (t, &dx) in terms_json.iter().zip(dims) {
        let term = if t.get("kind").and_then(Value::as_str) == Some("squared_distance") {
            if dx != dz {
                return Err(Error::InvalidParameter("squared_distance needs dim x == dim z".into()));
            }
            HedonicTerm::squared_distance(dx)
        } else {
            let zero = HedonicTerm::zero(dx, dz);
            HedonicTerm {
                p: matrix_or(t, "p", dx, dz, zero.p)?,
                q: vector_or(t, "q", dx)?,
                b: matrix_or(t, "b", dx, dx, zero.b)?,
                bl: vector_or(t, "bl", dx)?,
                l: matrix_or(t, "l", dz, dz, zero.l)?,
                ll: vector_or(t, "ll", dz)?,
                quartic: number_or(t, "quartic", 0.0)?,
                coupling: number_or(t, "coupling", 0.0)?,
            }
        };
        terms.push(term);
    }
    let d = InnerSettings::default();
    let settings = InnerSettings {
        grid: number_or(params, "grid", d.grid as f64)? as usize,
        refine_rounds: number_or(params, "refine_rounds", d.refine_rounds as f64)? as usize,
        tol: number_or(params, "tol", d.tol)?,
        separation: number_or(params, "separation", d.separation)?,
        definiteness_tol: number_or(params, "definiteness_tol", d.definiteness_tol)?,
    };
    Ok(HedonicSpec { z_domain, terms, settings })
}

fn equal_dims(family: &str, dims: &[usize]) -> Result<usize> {
    let n = dims[0];
    if dims.iter().any(|&d| d != n) {
        return Err(Error::InvalidParameter(format!("{family} needs all factors of equal dimension")));
    }
    Ok(n)
}

fn index(v: &Value, key: &str, m: usize) -> Result<usize> {
    let i = v
        .get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::InvalidParameter(format!("missing integer `{key}`")))? as usize;
    if i >= m {
        return Err(Error::InvalidParameter(format!("`{key}` = {i} out of range for m = {m}")));
    }
    Ok(i)
}

fn number_or(v: &Value, key: &str, default: f64) -> Result<f64> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(x) => x.as_f64().ok_or_else(|| Error::InvalidParameter(format!("`{key}` must be a number"))),
    }
}

fn matrix_or(v: &Value, key: &str, rows: usize, cols: usize, default: Matrix) -> Result<Matrix> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(x) => linalg::matrix_from_json(x, rows, cols),
    }
}

fn vector_field(v: &Value, key: &str) -> Result<Vec<f64>> {
    let arr = v
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::InvalidParameter(format!("missing list `{key}`")))?;
    arr.iter()
        .map(|x| x.as_f64().ok_or_else(|| Error::InvalidParameter(format!("`{key}` must hold numbers"))))
        .collect()
}

fn vector_or(v: &Value, key: &str, len: usize) -> Result<Vector> {
    match v.get(key) {
        None | Some(Value::Null) => Ok(Vector::zeros(len)),
        Some(_) => {
            let x = vector_field(v, key)?;
            if x.len() != len {
                return Err(Error::InvalidParameter(format!("`{key}` must have {len} entries")));
            }
            Ok(Vector::from_vec(x))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ProductConfiguration;

    #[test]
    fn unknown_family_is_rejected() {
        assert!(matches!(builtin_cost("quartic", 3, &[1, 1, 1], &json!({})), Err(Error::UnknownFamily(_))));
    }

    #[test]
    fn ill_sized_parameters_are_rejected() {
        let bad = json!({"terms": [{"i": 0, "j": 1, "matrix": [[1.0, 0.0]]}]});
        assert!(builtin_cost("bilinear", 2, &[2, 2], &bad).is_err());
        assert!(builtin_cost("g_plus_quadratic", 2, &[1, 1], &json!({})).is_err());
        assert!(builtin_cost("concave_of_sum", 3, &[1, 2, 1], &json!({})).is_err());
        assert!(builtin_cost("concave_of_sum", 3, &[1, 1], &json!({})).is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = CostSpec {
            family: "hedonic".into(),
            m: 3,
            dims: vec![1, 1, 1],
            params: json!({
                "z_lower": [-5.0], "z_upper": [5.0],
                "terms": [{"kind": "squared_distance"}, {"kind": "squared_distance"}, {"kind": "squared_distance"}]
            }),
        };
        let text = serde_json::to_string(&spec).unwrap();
        let back: CostSpec = serde_json::from_str(&text).unwrap();
        let c = back.build().unwrap();
        let x = ProductConfiguration::new(vec![vec![0.0], vec![1.0], vec![2.0]]);
        assert!((c.eval(&x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bilinear_normal_form_from_flat_matrix() {
        let c = builtin_cost("bilinear", 3, &[2, 2, 2], &json!({"normal_form": [1.0, 0.0, 0.0, 1.0]})).unwrap();
        let x = ProductConfiguration::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(c.eval(&x).unwrap(), 0.0 + 1.0 + 1.0);
    }

    #[test]
    fn perturbed_family_defaults_to_sin_dot() {
        let c = builtin_cost("concave_of_sum_perturbed", 3, &[1, 1, 1], &json!({"epsilon": 0.5})).unwrap();
        assert_eq!(c.name(), "concave_of_sum_perturbed");
        let x = ProductConfiguration::new(vec![vec![0.5], vec![1.0], vec![0.0]]);
        let expected = -(1.5_f64).powi(2) + 0.5 * (0.5_f64.sin() + 0.0 + 0.0);
        assert!((c.eval(&x).unwrap() - expected).abs() < 1e-15);
    }
}
