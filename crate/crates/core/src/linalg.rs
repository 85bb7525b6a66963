//! Small dense helpers shared by the model and dynamics layers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Inverses are refused below this reciprocal condition number.
pub const MIN_RCOND: f64 = 1e-10;

pub fn one_norm(a: &Matrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(a: &Matrix) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn vec_max_abs(v: &Vector) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// LU inverse together with the 1-norm reciprocal condition number.
pub fn inverse_with_rcond(a: &Matrix) -> Option<(Matrix, f64)> {
    if a.nrows() != a.ncols() {
        return None;
    }
    let inv = a.clone().lu().try_inverse()?;
    let denom = one_norm(a) * one_norm(&inv);
    let rcond = if denom > 0.0 && denom.is_finite() {
        1.0 / denom
    } else {
        0.0
    };
    Some((inv, rcond))
}

/// Inverse that fails with [`Error::SingularOperator`] when ill-conditioned.
pub fn checked_inverse(a: &Matrix, name: &'static str) -> Result<Matrix> {
    match inverse_with_rcond(a) {
        Some((inv, rcond)) if rcond >= MIN_RCOND => Ok(inv),
        Some((_, rcond)) => Err(Error::SingularOperator { name, rcond }),
        None => Err(Error::SingularOperator { name, rcond: 0.0 }),
    }
}

pub fn symmetry_defect(a: &Matrix) -> f64 {
    max_abs(&(a - a.transpose()))
}

pub fn min_symmetric_eigenvalue(a: &Matrix) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Nearest orthogonal matrix in the Frobenius norm.
pub fn polar_project(a: &Matrix) -> Matrix {
    let svd = a.clone().svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => u * v_t,
        _ => a.clone(),
    }
}

pub fn from_rows(rows: &[Vec<f64>]) -> Matrix {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    Matrix::from_fn(nrows, ncols, |i, j| rows[i][j])
}

pub fn to_rows(a: &Matrix) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

pub fn is_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}
