//! Dense helpers over `nalgebra` used by the cost and condition modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer};

use crate::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Symmetric part `(a + a^T) / 2`.
pub fn symmetric_part(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part of `a`, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetric_part(a)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Largest eigenvalue of `(a + a^T) / 2`, i.e. `max_{|v|=1} v^T a v`.
pub fn max_symmetric_eigenvalue(a: &Matrix) -> f64 {
    symmetric_eigenvalues(a).last().copied().unwrap_or(f64::NEG_INFINITY)
}

pub fn min_symmetric_eigenvalue(a: &Matrix) -> f64 {
    symmetric_eigenvalues(a).first().copied().unwrap_or(f64::INFINITY)
}

pub fn determinant(a: &Matrix) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    a.clone().lu().determinant()
}

/// Inverse of a square matrix, failing when `|det| <= det_tol`.
pub fn inverse(a: &Matrix, det_tol: f64) -> std::result::Result<Matrix, f64> {
    let det = determinant(a);
    if !(det.abs() > det_tol) {
        return Err(det);
    }
    a.clone().try_inverse().ok_or(det)
}

/// Max-abs entry.
pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Frobenius norm.
pub fn norm(a: &Matrix) -> f64 {
    a.norm()
}

pub fn identity(n: usize) -> Matrix {
    Matrix::identity(n, n)
}

pub fn to_vector(x: &[f64]) -> Vector {
    Vector::from_column_slice(x)
}

/// Row-major nested representation (`[[row0...], [row1...]]`).
pub fn to_rows(a: &Matrix) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|r| a.row(r).iter().copied().collect()).collect()
}

/// Matrix from nested rows, or from a flat row-major list when the shape is known.
pub fn matrix_from_json(value: &serde_json::Value, rows: usize, cols: usize) -> Result<Matrix> {
    let bad = || Error::InvalidParameter(format!("expected a {rows}x{cols} matrix, got {value}"));
    let arr = value.as_array().ok_or_else(bad)?;
    let flat: Vec<f64> = if arr.iter().all(|v| v.is_array()) {
        if arr.len() != rows {
            return Err(bad());
        }
        let mut out = Vec::with_capacity(rows * cols);
        for row in arr {
            let row = row.as_array().ok_or_else(bad)?;
            if row.len() != cols {
                return Err(bad());
            }
            for v in row {
                out.push(v.as_f64().ok_or_else(bad)?);
            }
        }
        out
    } else {
        if arr.len() != rows * cols {
            return Err(bad());
        }
        arr.iter().map(|v| v.as_f64().ok_or_else(bad)).collect::<Result<_>>()?
    };
    Ok(Matrix::from_row_slice(rows, cols, &flat))
}

/// Serde helper for `Vec<Vec<f64>>`-shaped matrices.
pub fn deserialize_rows<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Matrix, D::Error> {
    let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(serde::de::Error::custom("ragged matrix"));
    }
    Ok(Matrix::from_row_iterator(r, c, rows.into_iter().flatten()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_part_eigenvalues_of_skewed_matrix() {
        // (A + A^T)/2 = -I for A = [[-1, 0.3], [-0.3, -1]]
        let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.3, -0.3, -1.0]);
        let ev = symmetric_eigenvalues(&a);
        assert!((ev[0] + 1.0).abs() < 1e-14 && (ev[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn inverse_reports_determinant_on_failure() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let det = inverse(&a, 1e-10).unwrap_err();
        assert!(det.abs() < 1e-10);
        let b = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let inv = inverse(&b, 1e-10).unwrap();
        assert!((inv[(1, 1)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn matrix_json_accepts_rows_and_flat() {
        let nested = serde_json::json!([[1.0, 2.0], [3.0, 4.0]]);
        let flat = serde_json::json!([1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matrix_from_json(&nested, 2, 2).unwrap(), matrix_from_json(&flat, 2, 2).unwrap());
        assert_eq!(matrix_from_json(&nested, 2, 2).unwrap()[(0, 1)], 2.0);
        assert!(matrix_from_json(&flat, 3, 2).is_err());
    }
}
