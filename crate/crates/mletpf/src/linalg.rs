//! Minimal dense linear algebra for covariance handling.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub(crate) fn cholesky(a: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "Cholesky of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut l = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::InvalidInput(
                        "covariance matrix is not positive definite".into(),
                    ));
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solves `L z = b` for lower-triangular `L`.
pub(crate) fn forward_solve(l: &Array2<f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut z = Array1::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    z
}

/// `r' A^{-1} r` where `l` is the Cholesky factor of `A`.
pub(crate) fn mahalanobis_sq(l: &Array2<f64>, r: ArrayView1<'_, f64>) -> f64 {
    let z = forward_solve(l, r);
    z.iter().map(|v| v * v).sum()
}
