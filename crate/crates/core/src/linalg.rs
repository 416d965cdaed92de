//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

/// Cholesky factor of a symmetric matrix that must be positive definite with
/// minimum eigenvalue above `threshold`.
pub fn spd_factor(m: &DMatrix<f64>, threshold: f64) -> Result<Cholesky<f64, Dyn>> {
    let min_eig = min_eigenvalue(m);
    if !(min_eig > threshold) {
        return Err(Error::SingularHessian {
            min_eigenvalue: min_eig,
        });
    }
    let sym = (m + m.transpose()) * 0.5;
    Cholesky::new(sym).ok_or(Error::SingularHessian {
        min_eigenvalue: min_eig,
    })
}

pub fn solve_vec(chol: &Cholesky<f64, Dyn>, b: &DVector<f64>) -> DVector<f64> {
    chol.solve(b)
}

/// Quadratic form `v' m v`.
pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}
