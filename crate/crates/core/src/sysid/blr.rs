//! Conjugate Gaussian regression for one scalar output channel.
//!
//! With prior `θ ~ N(0, Σ₀)` and noise `ε ~ N(0, s·I)`:
//!
//! ```text
//! A  = ΦᵀΦ + s·Σ₀⁻¹
//! θ̄  = A⁻¹ Φᵀ Y
//! Σ̄  = s·A⁻¹
//! ```

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlrPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub prior_cov: DMatrix<f64>,
    pub noise_var: f64,
}

impl BlrPosterior {
    pub fn predict(&self, features: &DVector<f64>) -> f64 {
        self.mean.dot(features)
    }

    /// `φᵀ Σ̄ φ`.
    pub fn predictive_var(&self, features: &DVector<f64>) -> f64 {
        (features.transpose() * &self.cov * features)[(0, 0)]
    }
}

pub fn fit_blr(phi: &DMatrix<f64>, y: &DVector<f64>, prior_cov: &DMatrix<f64>, noise_var: f64) -> Result<BlrPosterior> {
    let (n, m) = phi.shape();
    if n == 0 {
        return Err(Error::Config("regression needs at least one row".into()));
    }
    if y.len() != n {
        return Err(Error::Dimension {
            what: "regression targets",
            expected: n,
            got: y.len(),
        });
    }
    if prior_cov.shape() != (m, m) {
        return Err(Error::Dimension {
            what: "prior covariance",
            expected: m,
            got: prior_cov.nrows(),
        });
    }
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(Error::Config(format!("noise variance must be finite and ≥ 0, got {noise_var}")));
    }
    if phi.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite regression data".into()));
    }

    let prior_chol = Cholesky::new(prior_cov.clone())
        .ok_or_else(|| Error::Config("prior covariance must be positive definite".into()))?;

    let mut normal = phi.transpose() * phi;
    if noise_var > 0.0 {
        normal += prior_chol.inverse() * noise_var;
    }
    let chol = Cholesky::new(normal.clone()).ok_or_else(|| {
        if noise_var == 0.0 {
            Error::IllPosed("ΦᵀΦ is rank deficient and there is no noise term; use a positive noise variance so the prior regularizes".into())
        } else {
            Error::IllPosed("normal matrix is not positive definite".into())
        }
    })?;
    if noise_var == 0.0 && rank_deficient(&chol) {
        return Err(Error::IllPosed(
            "ΦᵀΦ is numerically rank deficient and there is no noise term; use a positive noise variance so the prior regularizes".into(),
        ));
    }

    let rhs = phi.transpose() * y;
    let mean = chol.solve(&rhs);
    let cov = if noise_var > 0.0 {
        let mut c = chol.inverse() * noise_var;
        symmetrize(&mut c);
        c
    } else {
        DMatrix::zeros(m, m)
    };
    Ok(BlrPosterior {
        mean,
        cov,
        prior_cov: prior_cov.clone(),
        noise_var,
    })
}

fn rank_deficient(chol: &Cholesky<f64, nalgebra::Dyn>) -> bool {
    let l = chol.l_dirty();
    let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    diag.iter().any(|&d| d <= max * 1e-10)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn two_sample_scalar_case() {
        let post = fit_blr(&dmatrix![1.0; 1.0], &dvector![1.0, 3.0], &dmatrix![1.0], 2.0).unwrap();
        assert!((post.mean[0] - 1.0).abs() < 1e-15);
        assert!((post.cov[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn interpolates_without_noise() {
        let phi = dmatrix![1.0, 0.0; 1.0, 1.0; 1.0, 2.0; 1.0, 3.0];
        let theta = dvector![0.5, -2.0];
        let y = &phi * &theta;
        let post = fit_blr(&phi, &y, &DMatrix::identity(2, 2), 0.0).unwrap();
        assert!((post.mean - theta).amax() < 1e-12);
        assert_eq!(post.cov, DMatrix::zeros(2, 2));
    }

    #[test]
    fn prior_dominates_at_large_noise() {
        let phi = dmatrix![1.0, 2.0; 3.0, 4.0; 5.0, 7.0];
        let y = dvector![1.0, 2.0, 3.0];
        let post = fit_blr(&phi, &y, &DMatrix::identity(2, 2), 1e12).unwrap();
        assert!(post.mean.amax() < 1e-9);
    }

    #[test]
    fn rank_deficient_without_noise_is_ill_posed() {
        let phi = dmatrix![1.0, 2.0; 2.0, 4.0];
        let y = dvector![1.0, 2.0];
        let err = fit_blr(&phi, &y, &DMatrix::identity(2, 2), 0.0).unwrap_err();
        assert!(matches!(err, Error::IllPosed(_)));
        assert!(fit_blr(&phi, &y, &DMatrix::identity(2, 2), 0.1).is_ok());
    }

    #[test]
    fn rejects_indefinite_prior() {
        let phi = dmatrix![1.0];
        let err = fit_blr(&phi, &dvector![1.0], &dmatrix![-1.0], 1.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
