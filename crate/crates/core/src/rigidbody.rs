//! Torque-free rigid body driven by white-noise torques.
//!
//! The angular velocity obeys Euler's equations in principal axes,
//! `ω̇ᵢ = cᵢ ωⱼ ωₖ + τᵢ/Jᵢ`. Its mean and covariance follow a closed pair of
//! moment ODEs under Gaussian third-moment closure, and the kinetic energy
//! `U_K = ½ωᵀJω` has mean and variance rates that depend only on those moments:
//!
//! ```text
//! μ̇   = −J⁻¹(μ × Jμ) + J⁻¹σ          σ = [(J₂−J₃)Σ₂₃, (J₃−J₁)Σ₃₁, (J₁−J₂)Σ₁₂]
//! Σ̇   = AΣ + ΣAᵀ + J⁻¹QJ⁻¹           A = ∂f/∂ω at μ
//! μ̇_K = ½ tr(J⁻¹Q)
//! Ṙ_K = μ_K tr(J⁻¹Q) + tr((Σ + μμᵀ)Q)
//! Σ̇_K = tr((Σ + μμᵀ)Q)
//! ```

use log::{debug, warn};
use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::gaussian::{gaussian_third_moment, GaussianBelief};
use crate::linalg::{SymMat, VecN};
use crate::noise::check_noise_intensity;
use crate::ode::{rk4_step_in_place, Rk4Workspace};
use crate::sde::{SdeModel, TimeGrid};
use crate::stats::InvariantFn;

/// Absolute tolerance (scaled by the magnitude of Σ̇) between the two Σ̇ routes.
pub const DERIVATION_TOL: f64 = 1e-10;

/// Principal moments of inertia (kg·m²).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InertiaModel {
    j: [f64; 3],
}

impl InertiaModel {
    pub fn new(j: [f64; 3]) -> Result<Self> {
        if j.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "principal moments of inertia must be positive, got {j:?}"
            )));
        }
        let model = Self { j };
        if !model.satisfies_triangle_inequality() {
            warn!("inertia {j:?} violates J_i + J_j >= J_k; not a physical rigid body");
        }
        Ok(model)
    }

    pub fn principal(&self) -> [f64; 3] {
        self.j
    }

    pub fn satisfies_triangle_inequality(&self) -> bool {
        let [a, b, c] = self.j;
        a + b >= c && b + c >= a && a + c >= b
    }

    /// `(c₁, c₂, c₃) = ((J₂−J₃)/J₁, (J₃−J₁)/J₂, (J₁−J₂)/J₃)`.
    pub fn coefficients(&self) -> [f64; 3] {
        let [j1, j2, j3] = self.j;
        [(j2 - j3) / j1, (j3 - j1) / j2, (j1 - j2) / j3]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.j))
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(1.0 / self.j[0], 1.0 / self.j[1], 1.0 / self.j[2]))
    }

    /// `tr(J⁻¹Q)`.
    pub fn trace_inv_q(&self, q: &SymMat) -> f64 {
        (0..3).map(|i| q.get(i, i) / self.j[i]).sum()
    }

    /// `tr(JQ)`.
    pub fn trace_j_q(&self, q: &SymMat) -> f64 {
        (0..3).map(|i| q.get(i, i) * self.j[i]).sum()
    }
}

/// Torque-free drift `(c₁ω₂ω₃, c₂ω₁ω₃, c₃ω₁ω₂)`.
pub fn euler_drift(w: &Vector3<f64>, inertia: &InertiaModel) -> Vector3<f64> {
    let c = inertia.coefficients();
    Vector3::new(c[0] * w[1] * w[2], c[1] * w[0] * w[2], c[2] * w[0] * w[1])
}

/// The same drift written as `−J⁻¹(ω × Jω)`.
pub fn euler_drift_cross_form(w: &Vector3<f64>, inertia: &InertiaModel) -> Vector3<f64> {
    -(inertia.inverse() * w.cross(&(inertia.matrix() * w)))
}

/// Jacobian of [`euler_drift`] at `w`.
pub fn drift_jacobian(w: &Vector3<f64>, inertia: &InertiaModel) -> Matrix3<f64> {
    let c = inertia.coefficients();
    Matrix3::new(
        0.0,
        c[0] * w[2],
        c[0] * w[1],
        c[1] * w[2],
        0.0,
        c[1] * w[0],
        c[2] * w[1],
        c[2] * w[0],
        0.0,
    )
}

pub fn kinetic_energy(w: &Vector3<f64>, inertia: &InertiaModel) -> f64 {
    0.5 * (0..3).map(|i| inertia.j[i] * w[i] * w[i]).sum::<f64>()
}

/// `‖Jω‖²`, the squared angular-momentum norm.
pub fn angular_momentum_sq(w: &Vector3<f64>, inertia: &InertiaModel) -> f64 {
    (inertia.matrix() * w).norm_squared()
}

/// Rotational kinetic energy as an [`InvariantFn`] of ω.
#[derive(Clone, Copy, Debug)]
pub struct KineticEnergy {
    pub inertia: InertiaModel,
}

impl InvariantFn for KineticEnergy {
    fn value(&self, s: &[f64]) -> f64 {
        kinetic_energy(&Vector3::from_column_slice(s), &self.inertia)
    }

    fn gradient(&self, s: &[f64]) -> Option<VecN> {
        let g = self.inertia.matrix() * Vector3::from_column_slice(s);
        Some(VecN::from_column_slice(g.as_slice()))
    }

    fn hessian_half(&self, _s: &[f64]) -> Option<DMatrix<f64>> {
        let h = self.inertia.matrix() * 0.5;
        Some(DMatrix::from_column_slice(3, 3, h.as_slice()))
    }
}

/// Coupled moment state: angular-velocity mean/covariance and kinetic-energy moments.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidBodyMoments {
    pub mean: Vector3<f64>,
    pub cov: SymMat,
    /// `μ_K = E[U_K]` (J).
    pub ke_mean: f64,
    /// `R_K = E[U_K²]` (J²).
    pub ke_corr: f64,
    /// `Σ_K = cov[U_K]` (J²).
    pub ke_cov: f64,
}

impl RigidBodyMoments {
    /// Moments implied by a Gaussian angular-velocity belief, including the exact
    /// Gaussian variance of the kinetic energy.
    pub fn from_belief(belief: &GaussianBelief, inertia: &InertiaModel) -> Result<Self> {
        if belief.dim() != 3 {
            return Err(Error::Dimension(format!(
                "rigid-body belief must be 3-dimensional, got {}",
                belief.dim()
            )));
        }
        let mean = Vector3::from_column_slice(belief.mean().as_slice());
        let sigma = belief.cov().to_matrix3()?;
        let j = inertia.matrix();
        let ke_mean = 0.5 * (j * (sigma + mean * mean.transpose())).trace();
        // var(ωᵀAω) = 2 tr(AΣAΣ) + 4 μᵀAΣAμ with A = J/2
        let jsj = j * sigma * j;
        let ke_cov = 0.5 * (jsj * sigma).trace() + (mean.transpose() * jsj * mean)[0];
        Ok(Self {
            mean,
            cov: belief.cov().clone(),
            ke_mean,
            ke_corr: ke_cov + ke_mean * ke_mean,
            ke_cov,
        })
    }

    pub fn belief(&self) -> Result<GaussianBelief> {
        GaussianBelief::new(VecN::from_column_slice(self.mean.as_slice()), self.cov.clone())
    }

    /// `Σ + μμᵀ`.
    pub fn corr(&self) -> Matrix3<f64> {
        self.sigma() + self.mean * self.mean.transpose()
    }

    fn sigma(&self) -> Matrix3<f64> {
        self.cov.to_matrix3().expect("rigid-body covariance is 3x3")
    }
}

/// `σ = [(J₂−J₃)Σ₂₃, (J₃−J₁)Σ₃₁, (J₁−J₂)Σ₁₂]`.
pub fn sigma_vector(cov: &Matrix3<f64>, inertia: &InertiaModel) -> Vector3<f64> {
    let [j1, j2, j3] = inertia.j;
    Vector3::new(
        (j2 - j3) * cov[(1, 2)],
        (j3 - j1) * cov[(2, 0)],
        (j1 - j2) * cov[(0, 1)],
    )
}

fn mean_rate_scalar(mu: &Vector3<f64>, cov: &Matrix3<f64>, c: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(
        c[0] * (cov[(1, 2)] + mu[1] * mu[2]),
        c[1] * (cov[(2, 0)] + mu[2] * mu[0]),
        c[2] * (cov[(0, 1)] + mu[0] * mu[1]),
    )
}

/// `μ̇ = −J⁻¹(μ × Jμ) + J⁻¹σ`.
pub fn mean_rate_vector_form(m: &RigidBodyMoments, inertia: &InertiaModel) -> Vector3<f64> {
    euler_drift_cross_form(&m.mean, inertia) + inertia.inverse() * sigma_vector(&m.sigma(), inertia)
}

/// `μ̇ᵢ = cᵢ(Σⱼₖ + μⱼμₖ)`; equal to [`mean_rate_vector_form`] up to roundoff.
pub fn mean_rate(m: &RigidBodyMoments, inertia: &InertiaModel) -> Vector3<f64> {
    let rate = mean_rate_scalar(&m.mean, &m.sigma(), &inertia.coefficients());
    debug_assert!({
        let v = mean_rate_vector_form(m, inertia);
        (rate - v).amax() <= 1e-12 * (1.0 + rate.amax())
    });
    rate
}

/// `J⁻¹QJ⁻¹`.
fn noise_term(inertia: &InertiaModel, q: &Matrix3<f64>) -> Matrix3<f64> {
    let jinv = inertia.inverse();
    jinv * q * jinv
}

fn cov_rate_compact(mu: &Vector3<f64>, cov: &Matrix3<f64>, inertia: &InertiaModel, q: &Matrix3<f64>) -> Matrix3<f64> {
    let a = drift_jacobian(mu, inertia);
    a * cov + cov * a.transpose() + noise_term(inertia, q)
}

/// `Ω₃[i][j] = E[ωᵢ ωₐ ω_b]` with `{a, b}` the two indices other than `j`,
/// evaluated under Gaussian closure.
pub fn third_moment_block(m: &RigidBodyMoments) -> Result<Matrix3<f64>> {
    let belief = m.belief()?;
    let mut out = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            out[(i, j)] = gaussian_third_moment(i, a, b, &belief)?;
        }
    }
    Ok(out)
}

/// Σ̇ through the correlation: `Ṙ = Ω₂ + Ω₂ᵀ + J⁻¹QJ⁻¹` with `Ω₂ = Ω₃ diag(c)`,
/// then `Σ̇ = Ṙ − μ̇μᵀ − μμ̇ᵀ`.
pub fn cov_rate_via_correlation(m: &RigidBodyMoments, inertia: &InertiaModel, q: &SymMat) -> Result<Matrix3<f64>> {
    let c = inertia.coefficients();
    let omega2 = third_moment_block(m)? * Matrix3::from_diagonal(&Vector3::from(c));
    let corr_rate = omega2 + omega2.transpose() + noise_term(inertia, &q.to_matrix3()?);
    let mu_rate = mean_rate(m, inertia);
    Ok(corr_rate - mu_rate * m.mean.transpose() - m.mean * mu_rate.transpose())
}

/// `Σ̇ = AΣ + ΣAᵀ + J⁻¹QJ⁻¹`, cross-checked against [`cov_rate_via_correlation`].
pub fn cov_rate(m: &RigidBodyMoments, inertia: &InertiaModel, q: &SymMat) -> Result<SymMat> {
    check_rigid_noise(q)?;
    let qm = q.to_matrix3()?;
    let compact = cov_rate_compact(&m.mean, &m.sigma(), inertia, &qm);
    let other = cov_rate_via_correlation(m, inertia, q)?;
    let diff = (compact - other).amax();
    let tol = DERIVATION_TOL * compact.amax().max(1.0);
    if diff > tol {
        return Err(Error::DerivationMismatch {
            what: "covariance rate (compact vs third-moment route)".into(),
            diff,
            tol,
        });
    }
    SymMat::symmetrize(DMatrix::from_column_slice(3, 3, compact.as_slice()))
}

/// `μ̇_K = ½ tr(J⁻¹Q)`, independent of the state.
pub fn ke_mean_rate(inertia: &InertiaModel, q: &SymMat) -> f64 {
    0.5 * inertia.trace_inv_q(q)
}

/// Which trace factor multiplies `μ_K` in the kinetic-energy correlation rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeCorrForm {
    /// `μ_K tr(J⁻¹Q)`: substitution of `H = J/2`, `G = J⁻¹` into the invariant correlation rate.
    Derived,
    /// `μ_K tr(JQ)`: the alternative printed form, kept for comparison only.
    Printed,
}

pub fn ke_corr_rate_with(form: KeCorrForm, m: &RigidBodyMoments, inertia: &InertiaModel, q: &SymMat) -> f64 {
    let factor = match form {
        KeCorrForm::Derived => inertia.trace_inv_q(q),
        KeCorrForm::Printed => inertia.trace_j_q(q),
    };
    m.ke_mean * factor + ke_cov_rate(m, q)
}

/// `Ṙ_K = μ_K tr(J⁻¹Q) + tr((Σ + μμᵀ)Q)`.
pub fn ke_corr_rate(m: &RigidBodyMoments, inertia: &InertiaModel, q: &SymMat) -> f64 {
    let derived = ke_corr_rate_with(KeCorrForm::Derived, m, inertia, q);
    debug!(
        "ke_corr_rate derived = {derived:e}, tr(JQ) variant = {:e}",
        ke_corr_rate_with(KeCorrForm::Printed, m, inertia, q)
    );
    derived
}

/// `Σ̇_K = tr((Σ + μμᵀ)Q)`.
pub fn ke_cov_rate(m: &RigidBodyMoments, q: &SymMat) -> f64 {
    let corr = m.corr();
    (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| corr[(i, j)] * q.get(j, i))
        .sum()
}

fn check_rigid_noise(q: &SymMat) -> Result<()> {
    if q.order() != 3 {
        return Err(Error::Dimension(format!(
            "rigid-body noise intensity must be 3x3, got {0}x{0}",
            q.order()
        )));
    }
    check_noise_intensity(q)
}

const STATE_LEN: usize = 15;

fn pack(m: &RigidBodyMoments) -> [f64; STATE_LEN] {
    let mut y = [0.0; STATE_LEN];
    y[..3].copy_from_slice(m.mean.as_slice());
    y[3..12].copy_from_slice(m.sigma().as_slice());
    y[12] = m.ke_mean;
    y[13] = m.ke_corr;
    y[14] = m.ke_cov;
    y
}

fn unpack(y: &[f64]) -> Result<RigidBodyMoments> {
    Ok(RigidBodyMoments {
        mean: Vector3::from_column_slice(&y[..3]),
        cov: SymMat::symmetrize(DMatrix::from_column_slice(3, 3, &y[3..12]))?,
        ke_mean: y[12],
        ke_corr: y[13],
        ke_cov: y[14],
    })
}

/// Integrates the coupled moment ODEs with RK4 over `grid`, returning one entry per grid point.
///
/// Σ is symmetrized after every step. Σ_K is integrated as its own equation; R_K is
/// carried alongside so `R_K − μ_K²` can be compared against it.
pub fn propagate_moments(
    initial: &RigidBodyMoments,
    inertia: &InertiaModel,
    q: &SymMat,
    grid: &TimeGrid,
) -> Result<Vec<RigidBodyMoments>> {
    check_rigid_noise(q)?;
    let qm = q.to_matrix3()?;
    let c = inertia.coefficients();
    let ke_rate = ke_mean_rate(inertia, q);
    let tr_inv_q = inertia.trace_inv_q(q);

    let field = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let mu = Vector3::from_column_slice(&y[..3]);
        let sigma = Matrix3::from_column_slice(&y[3..12]);
        dy[..3].copy_from_slice(mean_rate_scalar(&mu, &sigma, &c).as_slice());
        dy[3..12].copy_from_slice(cov_rate_compact(&mu, &sigma, inertia, &qm).as_slice());
        let corr = sigma + mu * mu.transpose();
        let tr_corr_q: f64 = (0..3).map(|i| corr[(i, i)] * qm[(i, i)]).sum();
        dy[12] = ke_rate;
        dy[13] = y[12] * tr_inv_q + tr_corr_q;
        dy[14] = tr_corr_q;
    };

    let mut out = Vec::with_capacity(grid.len());
    let mut current = initial.clone();
    let mut ws = Rk4Workspace::new(STATE_LEN);
    out.push(current.clone());
    for k in 0..grid.steps() {
        let t = grid.time(k);
        // Consistency guard on the state the step starts from.
        cov_rate(&current, inertia, q)?;
        let mut y = pack(&current);
        rk4_step_in_place(field, t, &mut y, grid.dt(), &mut ws);
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "moment state component {i} at t = {}",
                grid.time(k + 1)
            )));
        }
        current = unpack(&y)?;
        if let Some((i, v)) = current.cov.diagonal().into_iter().enumerate().find(|&(_, v)| v < 0.0) {
            return Err(Error::ModelBreakdown {
                t: grid.time(k + 1),
                reason: format!("covariance diagonal entry {i} went negative ({v:e})"),
            });
        }
        out.push(current.clone());
    }
    Ok(out)
}

/// `dω = f(ω) dt + J⁻¹ dB`, `dB ~ N(0, Q dt)`.
#[derive(Clone, Debug)]
pub struct RigidBodySde {
    inertia: InertiaModel,
    q: SymMat,
    inv: [f64; 3],
}

impl RigidBodySde {
    pub fn new(inertia: InertiaModel, q: SymMat) -> Result<Self> {
        check_rigid_noise(&q)?;
        let j = inertia.principal();
        Ok(Self {
            inertia,
            q,
            inv: [1.0 / j[0], 1.0 / j[1], 1.0 / j[2]],
        })
    }

    pub fn inertia(&self) -> &InertiaModel {
        &self.inertia
    }
}

impl SdeModel for RigidBodySde {
    fn state_dim(&self) -> usize {
        3
    }

    fn noise_dim(&self) -> usize {
        3
    }

    fn noise_intensity(&self) -> &SymMat {
        &self.q
    }

    fn drift(&self, _t: f64, x: &[f64], dx: &mut [f64]) {
        let c = self.inertia.coefficients();
        dx[0] = c[0] * x[1] * x[2];
        dx[1] = c[1] * x[0] * x[2];
        dx[2] = c[2] * x[0] * x[1];
    }

    fn diffusion(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&VecN::from_column_slice(&self.inv))
    }

    fn add_diffusion(&self, _t: f64, _x: &[f64], db: &[f64], out: &mut [f64]) {
        for i in 0..3 {
            out[i] += self.inv[i] * db[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::RngStream;
    use crate::stats::derivative_mismatch;

    fn reference_inertia() -> InertiaModel {
        InertiaModel::new([10.0, 12.0, 14.0]).unwrap()
    }

    fn reference_q() -> SymMat {
        SymMat::from_diagonal(&[0.005, 0.002, 0.003]).unwrap()
    }

    fn reference_moments() -> RigidBodyMoments {
        let b = GaussianBelief::new(VecN::from_vec(vec![0.02; 3]), SymMat::scaled_identity(3, 2e-5)).unwrap();
        RigidBodyMoments::from_belief(&b, &reference_inertia()).unwrap()
    }

    fn random_moments(rng: &mut RngStream, scale: f64) -> RigidBodyMoments {
        let mu = Vector3::from_fn(|_, _| scale * rng.standard_normal());
        let l = Matrix3::from_fn(|_, _| scale * rng.standard_normal());
        let cov = SymMat::symmetrize(DMatrix::from_column_slice(3, 3, (l * l.transpose()).as_slice())).unwrap();
        RigidBodyMoments {
            mean: mu,
            cov,
            ke_mean: 0.0,
            ke_corr: 0.0,
            ke_cov: 0.0,
        }
    }

    #[test]
    fn inertia_validation() {
        assert!(InertiaModel::new([1.0, 0.0, 1.0]).is_err());
        assert!(InertiaModel::new([1.0, f64::NAN, 1.0]).is_err());
        // non-physical but accepted with a warning
        let odd = InertiaModel::new([1.0, 1.0, 5.0]).unwrap();
        assert!(!odd.satisfies_triangle_inequality());
        let c = reference_inertia().coefficients();
        assert!((c[0] + 0.2).abs() < 1e-15);
        assert!((c[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((c[2] + 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn principal_axis_spin_is_equilibrium() {
        for w in [-3.0, 0.0, 0.5, 10.0] {
            assert_eq!(
                euler_drift(&Vector3::new(w, 0.0, 0.0), &reference_inertia()),
                Vector3::zeros()
            );
        }
    }

    #[test]
    fn drift_at_reference_point() {
        let d = euler_drift(&Vector3::new(0.0, 1.0, 1.0), &reference_inertia());
        assert!((d - Vector3::new(-0.2, 0.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn cross_and_component_forms_agree() {
        let mut rng = RngStream::new(10, 0);
        let j = reference_inertia();
        for _ in 0..1000 {
            let w = Vector3::from_fn(|_, _| rng.standard_normal());
            let a = euler_drift(&w, &j);
            let b = euler_drift_cross_form(&w, &j);
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = RngStream::new(12, 0);
        let j = reference_inertia();
        let h = 1e-6;
        for _ in 0..200 {
            let w = Vector3::from_fn(|_, _| rng.standard_normal());
            let a = drift_jacobian(&w, &j);
            for col in 0..3 {
                let mut e = Vector3::zeros();
                e[col] = h;
                let fd = (euler_drift(&(w + e), &j) - euler_drift(&(w - e), &j)) / (2.0 * h);
                for row in 0..3 {
                    let scale = a.amax().max(1e-12);
                    assert!((a[(row, col)] - fd[row]).abs() / scale < 1e-8);
                }
            }
        }
    }

    #[test]
    fn kinetic_energy_values_and_derivatives() {
        let j = reference_inertia();
        assert_eq!(kinetic_energy(&Vector3::zeros(), &j), 0.0);
        assert!((kinetic_energy(&Vector3::new(0.02, 0.02, 0.02), &j) - 0.0072).abs() < 1e-16);
        let ke = KineticEnergy { inertia: j };
        let mut rng = RngStream::new(13, 0);
        for _ in 0..100 {
            let w: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            let (g, h) = derivative_mismatch(&ke, &w, 1e-3);
            assert!(g.unwrap() < 1e-8, "gradient err {g:?}");
            assert!(h.unwrap() < 1e-6);
        }
    }

    #[test]
    fn mean_rate_special_cases() {
        let j = reference_inertia();
        let mut m = reference_moments();
        // diagonal Σ: torque-free drift exactly
        assert_eq!(mean_rate(&m, &j), euler_drift(&m.mean, &j));

        m.mean = Vector3::zeros();
        m.cov = SymMat::from_rows(&[vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.3], vec![0.0, 0.3, 0.0]]).unwrap();
        let r = mean_rate(&m, &j);
        assert!((r - Vector3::new(-0.2 * 0.3, 0.0, 0.0)).amax() < 1e-16);
    }

    #[test]
    fn mean_rate_forms_agree_on_random_states() {
        let j = reference_inertia();
        let mut rng = RngStream::new(14, 0);
        for _ in 0..1000 {
            let m = random_moments(&mut rng, 1.0);
            let a = mean_rate(&m, &j);
            let b = mean_rate_vector_form(&m, &j);
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn cov_rate_zero_moments_is_noise_term() {
        let j = reference_inertia();
        let m = RigidBodyMoments {
            mean: Vector3::zeros(),
            cov: SymMat::zeros(3),
            ke_mean: 0.0,
            ke_corr: 0.0,
            ke_cov: 0.0,
        };
        let r = cov_rate(&m, &j, &reference_q()).unwrap();
        assert!((r.get(0, 0) - 5e-5).abs() < 1e-18);
        assert!((r.get(1, 1) - 0.002 / 144.0).abs() < 1e-18);
        assert_eq!(r.get(0, 1), 0.0);
    }

    #[test]
    fn cov_rate_vanishes_without_noise_at_zero_mean() {
        let mut rng = RngStream::new(15, 0);
        let mut m = random_moments(&mut rng, 1.0);
        m.mean = Vector3::zeros();
        let r = cov_rate(&m, &reference_inertia(), &SymMat::zeros(3)).unwrap();
        assert_eq!(r.as_matrix().amax(), 0.0);
    }

    #[test]
    fn cov_rate_rejects_non_diagonal_noise() {
        let q = SymMat::from_rows(&[vec![1.0, 0.1, 0.0], vec![0.1, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert!(matches!(
            cov_rate(&reference_moments(), &reference_inertia(), &q),
            Err(Error::NonDiagonalNoise { .. })
        ));
    }

    #[test]
    fn third_moment_block_entries() {
        // Spot-check Ω₃ against the hand-expanded Isserlis forms.
        let mut rng = RngStream::new(16, 0);
        let m = random_moments(&mut rng, 1.0);
        let o = third_moment_block(&m).unwrap();
        let (mu, s) = (m.mean, m.sigma());
        let c = mu[0] * mu[1] * mu[2] + mu[0] * s[(1, 2)] + mu[1] * s[(0, 2)] + mu[2] * s[(0, 1)];
        for i in 0..3 {
            assert!((o[(i, i)] - c).abs() < 1e-12);
        }
        let e113 = mu[0] * mu[0] * mu[2] + 2.0 * mu[0] * s[(0, 2)] + mu[2] * s[(0, 0)];
        assert!((o[(0, 1)] - e113).abs() < 1e-12);
        let e112 = mu[0] * mu[0] * mu[1] + 2.0 * mu[0] * s[(0, 1)] + mu[1] * s[(0, 0)];
        assert!((o[(0, 2)] - e112).abs() < 1e-12);
        let e233 = mu[1] * mu[2] * mu[2] + 2.0 * mu[2] * s[(1, 2)] + mu[1] * s[(2, 2)];
        assert!((o[(2, 0)] - e233).abs() < 1e-12);
    }

    #[test]
    fn kinetic_energy_rates() {
        let j = reference_inertia();
        assert_eq!(ke_mean_rate(&j, &SymMat::zeros(3)), 0.0);
        let rate = ke_mean_rate(&j, &reference_q());
        assert!((rate - 4.4048e-4).abs() < 1e-8);
        assert!((rate - 0.5 * (5e-4 + 0.002 / 12.0 + 0.003 / 14.0)).abs() < 1e-18);

        let m = reference_moments();
        assert!((ke_cov_rate(&m, &reference_q()) - 4.2e-6).abs() < 1e-18);
        assert_eq!(ke_cov_rate(&m, &SymMat::zeros(3)), 0.0);
        assert_eq!(ke_corr_rate(&m, &j, &SymMat::zeros(3)), 0.0);

        let zero = RigidBodyMoments {
            mean: Vector3::zeros(),
            cov: SymMat::zeros(3),
            ke_mean: 0.0,
            ke_corr: 0.0,
            ke_cov: 0.0,
        };
        assert_eq!(ke_corr_rate(&zero, &j, &reference_q()), 0.0);

        // the two trace factors differ by ~2 orders of magnitude for this inertia
        let d = ke_corr_rate_with(KeCorrForm::Derived, &m, &j, &reference_q());
        let p = ke_corr_rate_with(KeCorrForm::Printed, &m, &j, &reference_q());
        assert!(p / d > 50.0);
    }

    #[test]
    fn initial_kinetic_energy_moments() {
        let m = reference_moments();
        // μ_K = ½ tr(J(Σ + μμᵀ)) = ½ · 4.2e-4 · 36
        assert!((m.ke_mean - 0.00756).abs() < 1e-15);
        assert!((m.ke_corr - m.ke_cov - m.ke_mean * m.ke_mean).abs() < 1e-20);
    }

    #[test]
    fn ke_cov_rate_is_nonnegative() {
        let mut rng = RngStream::new(17, 0);
        for _ in 0..1000 {
            let m = random_moments(&mut rng, 1.0);
            let q: Vec<f64> = (0..3).map(|_| rng.uniform()).collect();
            assert!(ke_cov_rate(&m, &SymMat::from_diagonal(&q).unwrap()) >= 0.0);
        }
    }

    #[test]
    fn noiseless_moments_follow_euler_and_conserve_energy() {
        let j = reference_inertia();
        let b = GaussianBelief::new(VecN::from_vec(vec![0.02, -0.01, 0.03]), SymMat::zeros(3)).unwrap();
        let init = RigidBodyMoments::from_belief(&b, &j).unwrap();
        let grid = TimeGrid::from_horizon(0.1, 100.0).unwrap();
        let traj = propagate_moments(&init, &j, &SymMat::zeros(3), &grid).unwrap();
        let u0 = kinetic_energy(&init.mean, &j);
        for m in &traj {
            assert!(((kinetic_energy(&m.mean, &j) - u0) / u0).abs() < 1e-9);
            assert_eq!(m.cov.as_matrix().amax(), 0.0);
            assert_eq!(m.ke_mean, init.ke_mean);
        }
    }

    #[test]
    fn mean_energy_grows_linearly() {
        let j = reference_inertia();
        let q = reference_q();
        let init = reference_moments();
        let grid = TimeGrid::from_horizon(0.1, 100.0).unwrap();
        let traj = propagate_moments(&init, &j, &q, &grid).unwrap();
        assert_eq!(traj.len(), 1001);
        let rate = ke_mean_rate(&j, &q);
        for (k, m) in traj.iter().enumerate() {
            let expect = init.ke_mean + grid.time(k) * rate;
            assert!((m.ke_mean - expect).abs() < 1e-14);
        }
        let gain = traj[1000].ke_mean - traj[0].ke_mean;
        assert!((gain - 0.04405).abs() < 1e-5);
        // R_K − μ_K² tracks the separately integrated Σ_K
        for m in &traj {
            let recon = m.ke_corr - m.ke_mean * m.ke_mean;
            assert!((recon - m.ke_cov).abs() < 1e-12 * m.ke_corr.max(1e-12) + 1e-15);
            assert_eq!(m.cov.asymmetry(), 0.0);
        }
    }

    #[test]
    fn sde_drift_matches_euler_drift() {
        let model = RigidBodySde::new(reference_inertia(), reference_q()).unwrap();
        let mut dx = [0.0; 3];
        model.drift(0.0, &[0.1, 0.2, 0.3], &mut dx);
        let d = euler_drift(&Vector3::new(0.1, 0.2, 0.3), &reference_inertia());
        assert_eq!(dx, [d[0], d[1], d[2]]);
        let x = crate::sde::em_step(&model, 0.0, &[1.0, 0.0, 0.0], 0.1, &[0.0; 3]).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 0.0, 0.0]);
    }
}
