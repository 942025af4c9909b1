//! Small dense matrices for moment equations.
//!
//! [`SymMat`] holds covariances, correlations, noise intensities and Hessians.
//! Its constructors leave the stored matrix exactly symmetric, so downstream
//! code never has to re-symmetrize. General square matrices (drift Jacobians,
//! third-moment blocks) use nalgebra's [`DMatrix`] directly.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen};

use crate::error::{Error, Result};

pub type VecN = DVector<f64>;
pub type SquareMat = DMatrix<f64>;

/// Relative asymmetry accepted by [`SymMat::new`] before it is averaged away.
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SymMat(DMatrix<f64>);

impl SymMat {
    /// Wraps a matrix that is already symmetric up to roundoff.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        check_finite(&m, "symmetric matrix")?;
        let asym = max_asymmetry(&m);
        let scale = m.amax().max(1.0);
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self::average(m))
    }

    /// Projects any finite square matrix onto its symmetric part `(M + Mᵀ)/2`.
    pub fn symmetrize(m: DMatrix<f64>) -> Result<Self> {
        check_square(&m)?;
        check_finite(&m, "symmetric matrix")?;
        Ok(Self::average(m))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn scaled_identity(n: usize, p: f64) -> Self {
        Self(DMatrix::identity(n, n) * p)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(diag));
        check_finite(&m, "diagonal matrix")?;
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!("expected {n} rows of length {n}")));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn from_matrix3(m: &Matrix3<f64>) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(3, 3, m.as_slice()))
    }

    pub fn to_matrix3(&self) -> Result<Matrix3<f64>> {
        if self.order() != 3 {
            return Err(Error::Dimension(format!(
                "expected a 3x3 matrix, got {}x{}",
                self.order(),
                self.order()
            )));
        }
        Ok(Matrix3::from_column_slice(self.0.as_slice()))
    }

    fn average(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        // a + b == b + a in IEEE arithmetic, so both triangles get bit-identical values.
        Self(DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)])))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.order()).map(|i| self.0[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn is_diagonal(&self) -> bool {
        self.first_off_diagonal().is_none()
    }

    /// First nonzero off-diagonal entry in row-major order, if any.
    pub fn first_off_diagonal(&self) -> Option<(usize, usize, f64)> {
        let n = self.order();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j)
            .map(|(i, j)| (i, j, self.0[(i, j)]))
            .find(|&(_, _, v)| v != 0.0)
    }

    /// Largest |M_ij - M_ji|; zero for every value built through this type.
    pub fn asymmetry(&self) -> f64 {
        max_asymmetry(&self.0)
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let n = self.order();
        debug_assert_eq!(x.len(), n);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += x[i] * self.0[(i, j)] * x[j];
            }
        }
        acc
    }

    pub fn eig_bounds(&self) -> (f64, f64) {
        eig_extremes(&self.0)
    }
}

/// Extreme eigenvalues `(λ_min, λ_max)` of a symmetric matrix.
///
/// Rejects matrices that are not exactly symmetric.
pub fn sym_eig_bounds(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    check_square(m)?;
    check_finite(m, "eigenvalue input")?;
    let asym = max_asymmetry(m);
    if asym != 0.0 {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(eig_extremes(m))
}

fn eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    // Diagonal input (the usual noise intensity) needs no iteration.
    let n = m.nrows();
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0));
    let eigenvalues: Vec<f64> = if diagonal {
        (0..n).map(|i| m[(i, i)]).collect()
    } else {
        SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect()
    };
    eigenvalues
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| {
            (lo.min(l), hi.max(l))
        })
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
