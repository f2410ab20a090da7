//! Dense solves used by the fitting code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Smallest admissible squared Cholesky pivot of the diagonally equilibrated
/// matrix. Below this the system is treated as singular.
const PIVOT_RATIO: f64 = 1e-13;

/// Cholesky factor of a symmetric positive definite matrix, rejecting
/// matrices that are singular to working precision.
pub fn cholesky(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("matrix has non-finite entries".into()));
    }
    let max_diag = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_diag == 0.0 {
        return Err(Error::SingularSystem("matrix is zero".into()));
    }
    let chol = Cholesky::new(a.clone())
        .ok_or_else(|| Error::SingularSystem("matrix is not positive definite".into()))?;
    // for S A S with S = diag(a_ii^-1/2) the factor is S L, so the scaled
    // pivots are l_ii² / a_ii
    let l = chol.l_dirty();
    let min_pivot = (0..a.nrows())
        .map(|i| l[(i, i)] * l[(i, i)] / a[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if !(min_pivot >= PIVOT_RATIO) {
        return Err(Error::SingularSystem(format!(
            "equilibrated pivot {min_pivot:.3e} below {PIVOT_RATIO:.0e}"
        )));
    }
    Ok(chol)
}

pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(cholesky(a)?.solve(b))
}

/// Minimum-norm least-squares solution of `a x ≈ b`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || !smax.is_finite() {
        return Err(Error::SingularSystem("least-squares design is zero".into()));
    }
    let eps = smax * 1e-12 * a.nrows().max(a.ncols()) as f64;
    svd.solve(b, eps)
        .map_err(|e| Error::SingularSystem(e.to_string()))
}

/// `Zᵀ diag(w) Z`.
pub fn weighted_gram(z: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut wz = z.clone();
    for (mut row, w) in wz.row_iter_mut().zip(w) {
        row *= *w;
    }
    z.transpose() * wz
}

/// `Zᵀ diag(w) y`.
pub fn weighted_cross(z: &DMatrix<f64>, w: &[f64], y: &DVector<f64>) -> DVector<f64> {
    let wy = DVector::from_iterator(y.len(), y.iter().zip(w).map(|(y, w)| y * w));
    z.transpose() * wy
}
