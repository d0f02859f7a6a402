//! Small dense linear-algebra helpers shared by the Gaussian models.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative eigenvalue floor for positive-definiteness checks.
pub const DEFAULT_PD_TOL: f64 = 1e-10;

/// Checks symmetry and that the smallest eigenvalue exceeds `rel_tol` times
/// the largest.
pub fn check_spd(s: &DMatrix<f64>, rel_tol: f64) -> Result<()> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch {
            expected: s.nrows(),
            got: s.ncols(),
        });
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("precision matrix".into()));
    }
    let scale = s.amax().max(f64::MIN_POSITIVE);
    if (s - s.transpose()).amax() > 1e-10 * scale {
        return Err(Error::NotPositiveDefinite);
    }
    let eig = SymmetricEigen::new(s.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if max <= 0.0 || min <= rel_tol * max {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(())
}

pub fn cholesky(s: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(s.clone()).ok_or(Error::NotPositiveDefinite)
}

/// `log det` of an SPD matrix through its Cholesky factor.
pub fn logdet_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d.ln())
        .sum::<f64>()
}

/// `(m + m^T) / 2`
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `v^T A v`
pub fn quad_form(a: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(a * v))
}

/// Sample covariance with divisor `T` (maximum-likelihood normalization)
/// around the given mean.
pub fn mle_covariance(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let t = x.nrows();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    (centered.transpose() * &centered) / t as f64
}
