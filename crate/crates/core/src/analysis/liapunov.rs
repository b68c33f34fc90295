//! Algebraic Liapunov equation `H P + P H = Sigma` for symmetric positive definite `H`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise covariance, its Liapunov solution and the Frobenius residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub sigma: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub residual: f64,
}

fn symmetric(m: &DMatrix<f64>) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

pub(crate) fn require_spd(h: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !symmetric(h) || h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite);
    }
    let eig = SymmetricEigen::new(h.clone());
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(eig)
}

/// Solve by diagonalizing `H = Q diag(l) Q'`: in that basis the equation
/// decouples to `(l_i + l_j) P~_ij = Sigma~_ij`.
pub fn solve_liapunov(h: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<CovarianceReport> {
    let eig = require_spd(h)?;
    let n = h.nrows();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: sigma.nrows(),
        });
    }
    if !symmetric(sigma) {
        return Err(Error::InvalidParameter("noise covariance must be symmetric".into()));
    }
    let q = &eig.eigenvectors;
    let mut t = q.transpose() * sigma * q;
    for i in 0..n {
        for j in 0..n {
            t[(i, j)] /= eig.eigenvalues[i] + eig.eigenvalues[j];
        }
    }
    let p = q * t * q.transpose();
    let p = (&p + p.transpose()) * 0.5;
    let residual = (h * &p + &p * h - sigma).norm();
    Ok(CovarianceReport {
        sigma: sigma.clone(),
        p,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_case() {
        let r = solve_liapunov(&DMatrix::identity(3, 3), &DMatrix::identity(3, 3)).unwrap();
        assert_relative_eq!(r.p, DMatrix::identity(3, 3) * 0.5, epsilon = 1e-15);
        assert!(r.residual < 1e-14);
    }

    #[test]
    fn scalar_case() {
        let r = solve_liapunov(&DMatrix::from_element(1, 1, 4.0), &DMatrix::from_element(1, 1, 3.0)).unwrap();
        assert_relative_eq!(r.p[(0, 0)], 3.0 / 8.0, max_relative = 1e-14);
    }

    #[test]
    fn diagonal_case() {
        let h = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]));
        let r = solve_liapunov(&h, &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(r.p[(0, 0)], 0.5, max_relative = 1e-14);
        assert_relative_eq!(r.p[(1, 1)], 0.25, max_relative = 1e-14);
        assert!(r.p[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            solve_liapunov(&h, &DMatrix::identity(2, 2)),
            Err(Error::NotPositiveDefinite)
        ));
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            solve_liapunov(&h, &DMatrix::identity(2, 2)),
            Err(Error::NotPositiveDefinite)
        ));
        assert!(solve_liapunov(&DMatrix::identity(2, 2), &DMatrix::identity(3, 3)).is_err());
    }
}
