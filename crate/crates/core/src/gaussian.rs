//! Gaussian beliefs and the moment identities used by the closures.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{SymMat, VecN};
use crate::noise::RngStream;

/// Mean and covariance of a state at one time instant.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    mean: VecN,
    cov: SymMat,
}

impl GaussianBelief {
    pub fn new(mean: VecN, cov: SymMat) -> Result<Self> {
        if mean.len() != cov.order() {
            return Err(Error::Dimension(format!(
                "mean has {} entries but covariance is {}x{}",
                mean.len(),
                cov.order(),
                cov.order()
            )));
        }
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("belief mean".into()));
        }
        if let Some(v) = cov.diagonal().into_iter().find(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!("covariance has negative variance {v}")));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &VecN {
        &self.mean
    }

    pub fn cov(&self) -> &SymMat {
        &self.cov
    }

    pub fn corr(&self) -> SymMat {
        corr_from_cov(self)
    }

    /// `E[X_i X_j X_k]`, see [`gaussian_third_moment`].
    pub fn third_moment(&self, i: usize, j: usize, k: usize) -> Result<f64> {
        gaussian_third_moment(i, j, k, self)
    }

    /// Lower factor `L` with `L Lᵀ = cov`, tolerating semidefinite covariances.
    pub fn sampling_factor(&self) -> DMatrix<f64> {
        let c = self.cov.as_matrix();
        if let Some(chol) = c.clone().cholesky() {
            return chol.l();
        }
        // Singular covariance (e.g. a deterministic component): use the eigen square root.
        let eig = SymmetricEigen::new(c.clone());
        let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
    }

    /// Draws one sample using `factor` from [`Self::sampling_factor`].
    pub fn sample_with(&self, factor: &DMatrix<f64>, rng: &mut RngStream, out: &mut [f64]) {
        let n = self.dim();
        let mut z = vec![0.0; n];
        rng.fill_standard_normal(&mut z);
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let mut v = self.mean[i];
            for (k, zk) in z.iter().enumerate() {
                v += factor[(i, k)] * zk;
            }
            *o = v;
        }
    }
}

/// Correlation `E[XXᵀ] = cov + mean meanᵀ`.
pub fn corr_from_cov(belief: &GaussianBelief) -> SymMat {
    let m = &belief.mean;
    let corr = belief.cov.as_matrix() + m * m.transpose();
    SymMat::symmetrize(corr).expect("finite belief gives finite correlation")
}

/// Covariance recovered from a correlation and mean: `corr - mean meanᵀ`.
pub fn cov_from_corr(corr: &SymMat, mean: &VecN) -> Result<SymMat> {
    if corr.order() != mean.len() {
        return Err(Error::Dimension(format!(
            "correlation is {0}x{0} but mean has {1} entries",
            corr.order(),
            mean.len()
        )));
    }
    SymMat::symmetrize(corr.as_matrix() - mean * mean.transpose())
}

/// `E[Gᵀ M G] = tr(M corr[G])`.
pub fn expect_quadratic_form(m: &SymMat, corr: &SymMat) -> Result<f64> {
    if m.order() != corr.order() {
        return Err(Error::Dimension(format!(
            "quadratic form is {0}x{0} but correlation is {1}x{1}",
            m.order(),
            corr.order()
        )));
    }
    Ok(m.as_matrix().component_mul(corr.as_matrix()).sum())
}

/// `E[X_i X_j X_k]` for a Gaussian: `μiμjμk + μiΣjk + μjΣik + μkΣij` (Isserlis).
///
/// Covers repeated indices, e.g. `E[X_1² X_3] = μ1²μ3 + 2μ1Σ13 + μ3Σ11`.
pub fn gaussian_third_moment(i: usize, j: usize, k: usize, belief: &GaussianBelief) -> Result<f64> {
    let n = belief.dim();
    if i >= n || j >= n || k >= n {
        return Err(Error::InvalidArgument(format!(
            "third-moment index ({i},{j},{k}) out of range for dimension {n}"
        )));
    }
    let mu = &belief.mean;
    let s = belief.cov.as_matrix();
    Ok(mu[i] * mu[j] * mu[k] + mu[i] * s[(j, k)] + mu[j] * s[(i, k)] + mu[k] * s[(i, j)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn belief(mean: &[f64], cov: SymMat) -> GaussianBelief {
        GaussianBelief::new(VecN::from_column_slice(mean), cov).unwrap()
    }

    #[test]
    fn corr_of_zero_mean_is_cov() {
        let b = belief(&[0.0; 3], SymMat::identity(3));
        assert_eq!(corr_from_cov(&b), SymMat::identity(3));
    }

    #[test]
    fn corr_of_deterministic_variable() {
        let b = belief(&[1.0, 0.0, 0.0], SymMat::zeros(3));
        let c = corr_from_cov(&b);
        for i in 0..3 {
            for j in 0..3 {
                let e = if (i, j) == (0, 0) { 1.0 } else { 0.0 };
                assert_eq!(c.get(i, j), e);
            }
        }
    }

    #[test]
    fn corr_reference_initial_belief() {
        let b = belief(&[0.02; 3], SymMat::scaled_identity(3, 2e-5));
        let c = corr_from_cov(&b);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 4.2e-4 } else { 4e-4 };
                assert!((c.get(i, j) - e).abs() < 1e-18);
            }
        }
        assert_eq!(c.asymmetry(), 0.0);
    }

    #[test]
    fn corr_then_cov_is_identity_map() {
        let cov = SymMat::from_rows(&[vec![2.0, 0.3, -0.1], vec![0.3, 1.0, 0.2], vec![-0.1, 0.2, 0.5]]).unwrap();
        let b = belief(&[0.5, -1.0, 2.0], cov.clone());
        let back = cov_from_corr(&corr_from_cov(&b), b.mean()).unwrap();
        assert!((back.as_matrix() - cov.as_matrix()).amax() < 1e-15);
    }

    #[test]
    fn quadratic_form_expectations() {
        let i3 = SymMat::identity(3);
        assert_eq!(expect_quadratic_form(&i3, &i3).unwrap(), 3.0);
        assert_eq!(expect_quadratic_form(&SymMat::zeros(3), &i3).unwrap(), 0.0);
        assert!(expect_quadratic_form(&SymMat::identity(2), &i3).is_err());
    }

    #[test]
    fn third_moment_cases() {
        let zero_mean = belief(&[0.0; 3], SymMat::from_diagonal(&[1.0, 2.0, 3.0]).unwrap());
        assert_eq!(gaussian_third_moment(0, 1, 2, &zero_mean).unwrap(), 0.0);
        assert_eq!(gaussian_third_moment(1, 1, 1, &zero_mean).unwrap(), 0.0);

        let b = belief(&[1.0, 2.0, 3.0], SymMat::identity(3));
        assert_eq!(gaussian_third_moment(0, 1, 2, &b).unwrap(), 6.0);

        let cov = SymMat::from_rows(&[vec![2.0, 0.0, 0.5], vec![0.0, 1.0, 0.0], vec![0.5, 0.0, 1.0]]).unwrap();
        let b = belief(&[1.0, 1.0, 1.0], cov);
        assert_eq!(gaussian_third_moment(0, 0, 2, &b).unwrap(), 4.0);
        assert!(gaussian_third_moment(0, 3, 0, &b).is_err());
    }

    #[test]
    fn rejects_inconsistent_beliefs() {
        assert!(GaussianBelief::new(dvector![0.0, 0.0], SymMat::identity(3)).is_err());
        assert!(GaussianBelief::new(dvector![f64::NAN], SymMat::identity(1)).is_err());
        assert!(GaussianBelief::new(dvector![0.0], SymMat::scaled_identity(1, -1.0)).is_err());
    }

    #[test]
    fn sampling_factor_reproduces_cov_even_when_singular() {
        let cov = SymMat::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let b = belief(&[0.0, 0.0], cov.clone());
        let l = b.sampling_factor();
        assert!((&l * l.transpose() - cov.as_matrix()).amax() < 1e-12);
    }
}
