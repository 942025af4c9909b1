//! Perturbed two-body problem and the squared specific angular momentum
//! `h = ‖r × ṙ‖² = ‖r‖²‖ṙ‖² − (r·ṙ)²`.
//!
//! The state is `(r, ṙ)` with `dṙ = −μ r/‖r‖³ dt + dB`. Because `h` is a drift
//! invariant, its mean and correlation rates come entirely from the Itô terms:
//!
//! ```text
//! μ̇_h = E[‖r‖² tr Q − rᵀQr]
//! Ṙ_h = 2 E[tr Q ‖v‖² − (rᵀQr/‖r‖²) ‖v‖² + 2 vᵀQv],   v = ‖r‖²ṙ − (r·ṙ) r
//! ```
//!
//! No closure is assumed here; the expectations are ensemble averages and the
//! eigenvalue bounds bracket them.

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector3};

use crate::error::{Error, Result};
use crate::linalg::{SymMat, VecN};
use crate::noise::check_noise_intensity;
use crate::sde::{Ensemble, SdeModel};
use crate::stats::InvariantFn;

/// Relative tolerance for the Lagrange identity `h = ‖r × ṙ‖²`.
pub const LAGRANGE_TOL: f64 = 1e-12;
/// Relative tolerance between the simplified and expanded `Ṙ_h` integrands.
pub const RH_FORMS_TOL: f64 = 1e-9;
/// `Ṙ_h / E[h‖r‖²]` for `Q = pI`, in units of `p`, by substitution.
pub const ISOTROPIC_RH_FACTOR_DERIVED: f64 = 8.0;
/// The alternative constant `24p` that the oracle tests against.
pub const ISOTROPIC_RH_FACTOR_PRINTED: f64 = 24.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoBodyState {
    pub r: Vector3<f64>,
    pub rdot: Vector3<f64>,
}

impl TwoBodyState {
    pub fn new(r: Vector3<f64>, rdot: Vector3<f64>) -> Self {
        Self { r, rdot }
    }

    /// Reads `(r, ṙ)` from a 6-slice.
    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            r: Vector3::new(s[0], s[1], s[2]),
            rdot: Vector3::new(s[3], s[4], s[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.r[0],
            self.r[1],
            self.r[2],
            self.rdot[0],
            self.rdot[1],
            self.rdot[2],
        ]
    }
}

/// Gravitational parameter, perturbation intensity and exclusion radius.
#[derive(Clone, Debug, PartialEq)]
pub struct GravModel {
    mu_grav: f64,
    q: SymMat,
    r_min: f64,
}

impl GravModel {
    /// `r_min` defaults to `1e-3 · r0_norm` when not given.
    pub fn new(mu_grav: f64, q: SymMat, r_min: Option<f64>, r0_norm: f64) -> Result<Self> {
        if !(mu_grav > 0.0 && mu_grav.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gravitational parameter must be positive, got {mu_grav}"
            )));
        }
        if q.order() != 3 {
            return Err(Error::Dimension(format!(
                "perturbation intensity must be 3x3, got {0}x{0}",
                q.order()
            )));
        }
        let (lo, _) = q.eig_bounds();
        if lo < -1e-12 * q.as_matrix().amax().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "perturbation intensity must be positive semidefinite (min eigenvalue {lo:e})"
            )));
        }
        let r_min = r_min.unwrap_or(1e-3 * r0_norm);
        if !(r_min > 0.0 && r_min.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "exclusion radius must be positive, got {r_min}"
            )));
        }
        Ok(Self { mu_grav, q, r_min })
    }

    pub fn mu_grav(&self) -> f64 {
        self.mu_grav
    }

    pub fn q(&self) -> &SymMat {
        &self.q
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    fn check_radius(&self, r: &Vector3<f64>) -> Result<()> {
        let radius = r.norm();
        // written so that a NaN radius also fails
        if !(radius >= self.r_min) {
            return Err(Error::Singularity {
                path: 0,
                radius,
                r_min: self.r_min,
            });
        }
        Ok(())
    }
}

/// `(ṙ, −μ r/‖r‖³)`.
pub fn twobody_drift(s: &TwoBodyState, g: &GravModel) -> Result<[f64; 6]> {
    g.check_radius(&s.r)?;
    let acc = gravity(&s.r, g.mu_grav);
    Ok([s.rdot[0], s.rdot[1], s.rdot[2], acc[0], acc[1], acc[2]])
}

fn gravity(r: &Vector3<f64>, mu: f64) -> Vector3<f64> {
    let n2 = r.norm_squared();
    -r * (mu / (n2 * n2.sqrt()))
}

/// `h`, its gradient `(∂h/∂r, ∂h/∂ṙ)` and `H_h = ½∇²h`.
#[derive(Clone, Debug, PartialEq)]
pub struct HEvaluation {
    pub value: f64,
    pub gradient: [f64; 6],
    pub hessian_half: Matrix6<f64>,
}

pub fn h_value(s: &TwoBodyState) -> f64 {
    let rd = s.r.dot(&s.rdot);
    s.r.norm_squared() * s.rdot.norm_squared() - rd * rd
}

pub fn h_invariant(s: &TwoBodyState) -> HEvaluation {
    let (r, w) = (&s.r, &s.rdot);
    let rr = r.norm_squared();
    let ww = w.norm_squared();
    let rw = r.dot(w);
    let value = rr * ww - rw * rw;

    let cross = r.cross(w).norm_squared();
    debug_assert!(
        (value - cross).abs() <= LAGRANGE_TOL * (rr * ww).max(f64::MIN_POSITIVE) * 10.0,
        "Lagrange identity violated: {value} vs {cross}"
    );

    let gr = 2.0 * ww * r - 2.0 * rw * w;
    let gw = 2.0 * rr * w - 2.0 * rw * r;

    let eye = Matrix3::identity();
    let top_left = ww * eye - w * w.transpose();
    let top_right = 2.0 * r * w.transpose() - w * r.transpose() - rw * eye;
    let bottom_right = rr * eye - r * r.transpose();
    let mut hh = Matrix6::zeros();
    hh.fixed_view_mut::<3, 3>(0, 0).copy_from(&top_left);
    hh.fixed_view_mut::<3, 3>(0, 3).copy_from(&top_right);
    hh.fixed_view_mut::<3, 3>(3, 0).copy_from(&top_right.transpose());
    hh.fixed_view_mut::<3, 3>(3, 3).copy_from(&bottom_right);

    HEvaluation {
        value,
        gradient: [gr[0], gr[1], gr[2], gw[0], gw[1], gw[2]],
        hessian_half: hh,
    }
}

/// `GᵀH_hG`, the velocity block of `H_h`: `‖r‖²I − rrᵀ`.
pub fn velocity_block(s: &TwoBodyState) -> Matrix3<f64> {
    s.r.norm_squared() * Matrix3::identity() - s.r * s.r.transpose()
}

/// `h` as an [`InvariantFn`] of the 6-state.
#[derive(Clone, Copy, Debug, Default)]
pub struct HInvariant;

impl InvariantFn for HInvariant {
    fn value(&self, s: &[f64]) -> f64 {
        h_value(&TwoBodyState::from_slice(s))
    }

    fn gradient(&self, s: &[f64]) -> Option<VecN> {
        Some(VecN::from_column_slice(
            &h_invariant(&TwoBodyState::from_slice(s)).gradient,
        ))
    }

    fn hessian_half(&self, s: &[f64]) -> Option<DMatrix<f64>> {
        let h = h_invariant(&TwoBodyState::from_slice(s)).hessian_half;
        Some(DMatrix::from_column_slice(6, 6, h.as_slice()))
    }
}

/// `v = ‖r‖²ṙ − (r·ṙ) r`: ṙ with its component along r removed, scaled by ‖r‖².
pub fn v_vector(s: &TwoBodyState) -> Vector3<f64> {
    s.r.norm_squared() * s.rdot - s.r.dot(&s.rdot) * s.r
}

fn check_q(q: &SymMat) -> Result<Matrix3<f64>> {
    if q.order() != 3 {
        return Err(Error::Dimension(format!(
            "perturbation intensity must be 3x3, got {0}x{0}",
            q.order()
        )));
    }
    q.to_matrix3()
}

/// `tr(E[rrᵀ]) tr(Q) − tr(Q E[rrᵀ])`.
pub fn mu_h_rate_exact(second_moments_of_r: &SymMat, q: &SymMat) -> Result<f64> {
    let e = check_q(second_moments_of_r)?;
    let qm = check_q(q)?;
    Ok(e.trace() * qm.trace() - (qm * e).trace())
}

/// `E[‖r‖²](tr Q − λ_M) ≤ μ̇_h ≤ E[‖r‖²](tr Q − λ_m)`.
pub fn mu_h_rate_bounds(e_norm_r_sq: f64, q: &SymMat) -> Result<(f64, f64)> {
    if !(e_norm_r_sq >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "E[|r|^2] must be nonnegative, got {e_norm_r_sq}"
        )));
    }
    check_q(q)?;
    let (lm, lmax) = q.eig_bounds();
    let tr = q.trace();
    Ok((e_norm_r_sq * (tr - lmax), e_norm_r_sq * (tr - lm)))
}

/// `2(tr Q + 2λ_m − λ_M) E[h‖r‖²] ≤ Ṙ_h ≤ 2(tr Q + 2λ_M − λ_m) E[h‖r‖²]`.
pub fn r_h_rate_bounds(e_h_r_sq: f64, q: &SymMat) -> Result<(f64, f64)> {
    if !(e_h_r_sq >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "E[h|r|^2] must be nonnegative, got {e_h_r_sq}"
        )));
    }
    check_q(q)?;
    let (lm, lmax) = q.eig_bounds();
    let tr = q.trace();
    Ok((
        2.0 * (tr + 2.0 * lm - lmax) * e_h_r_sq,
        2.0 * (tr + 2.0 * lmax - lm) * e_h_r_sq,
    ))
}

/// Per-state integrand of `μ̇_h`: `‖r‖² tr Q − rᵀQr`.
pub fn mu_h_integrand(s: &TwoBodyState, q: &Matrix3<f64>) -> f64 {
    s.r.norm_squared() * q.trace() - (s.r.transpose() * q * s.r)[0]
}

/// Per-state integrand of `Ṙ_h` in the v-form and in the expanded form.
pub fn r_h_integrands(s: &TwoBodyState, q: &Matrix3<f64>) -> (f64, f64) {
    let (r, w) = (&s.r, &s.rdot);
    let rr = r.norm_squared();
    let rw = r.dot(w);
    let rqr = (r.transpose() * q * r)[0];
    let tr = q.trace();

    let v = v_vector(s);
    let vv = v.norm_squared();
    let simplified = 2.0 * (tr * vv - rqr / rr * vv + 2.0 * (v.transpose() * q * v)[0]);

    let h = rr * w.norm_squared() - rw * rw;
    let wqw = (w.transpose() * q * w)[0];
    let wqr = (w.transpose() * q * r)[0];
    let expanded = 2.0 * (rr * tr - rqr) * h + 4.0 * rr * rr * wqw + 4.0 * rw * rw * rqr - 8.0 * rr * rw * wqr;
    (simplified, expanded)
}

/// `Ṙ_h` as an ensemble average over live paths. The v-form and the expanded
/// form are both accumulated and must agree to [`RH_FORMS_TOL`].
pub fn r_h_rate_exact(ens: &Ensemble, grav: &GravModel) -> Result<f64> {
    if ens.dim() != 6 {
        return Err(Error::Dimension(format!(
            "two-body ensemble states must be 6-dimensional, got {}",
            ens.dim()
        )));
    }
    let q = grav.q.to_matrix3()?;
    let mut simplified = 0.0;
    let mut expanded = 0.0;
    let mut scale = 0.0;
    let mut count = 0usize;
    for (i, x) in ens.live_states().enumerate() {
        let s = TwoBodyState::from_slice(x);
        grav.check_radius(&s.r).map_err(|e| match e {
            Error::Singularity { radius, r_min, .. } => Error::Singularity { path: i, radius, r_min },
            other => other,
        })?;
        let (a, b) = r_h_integrands(&s, &q);
        simplified += a;
        expanded += b;
        scale += a.abs().max(b.abs());
        count += 1;
    }
    let diff = (simplified - expanded).abs();
    let tol = RH_FORMS_TOL * scale.max(f64::MIN_POSITIVE);
    if diff > tol {
        return Err(Error::DerivationMismatch {
            what: "R_h rate (v-form vs expanded form)".into(),
            diff: diff / count as f64,
            tol: tol / count as f64,
        });
    }
    Ok(simplified / count as f64)
}

/// `dr = ṙ dt`, `dṙ = −μ r/‖r‖³ dt + dB`, `dB ~ N(0, Q dt)`.
#[derive(Clone, Debug)]
pub struct TwoBodySde {
    grav: GravModel,
}

impl TwoBodySde {
    /// The sampler draws independent components, so here `Q` must be diagonal.
    pub fn new(grav: GravModel) -> Result<Self> {
        check_noise_intensity(&grav.q)?;
        Ok(Self { grav })
    }

    pub fn grav(&self) -> &GravModel {
        &self.grav
    }
}

impl SdeModel for TwoBodySde {
    fn state_dim(&self) -> usize {
        6
    }

    fn noise_dim(&self) -> usize {
        3
    }

    fn noise_intensity(&self) -> &SymMat {
        &self.grav.q
    }

    fn drift(&self, _t: f64, x: &[f64], dx: &mut [f64]) {
        let r = Vector3::new(x[0], x[1], x[2]);
        let a = gravity(&r, self.grav.mu_grav);
        dx[..3].copy_from_slice(&x[3..6]);
        dx[3..].copy_from_slice(a.as_slice());
    }

    fn diffusion(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(6, 3);
        for i in 0..3 {
            g[(3 + i, i)] = 1.0;
        }
        g
    }

    fn add_diffusion(&self, _t: f64, _x: &[f64], db: &[f64], out: &mut [f64]) {
        for i in 0..3 {
            out[3 + i] += db[i];
        }
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        self.grav.check_radius(&Vector3::new(x[0], x[1], x[2]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::RngStream;
    use crate::stats::derivative_mismatch;

    fn rand_state(rng: &mut RngStream) -> TwoBodyState {
        TwoBodyState::new(
            Vector3::from_fn(|_, _| rng.standard_normal()),
            Vector3::from_fn(|_, _| rng.standard_normal()),
        )
    }

    fn grav(q: SymMat) -> GravModel {
        GravModel::new(1.0, q, None, 1.0).unwrap()
    }

    fn diag_q() -> SymMat {
        SymMat::from_diagonal(&[0.005, 0.002, 0.003]).unwrap()
    }

    #[test]
    fn drift_examples() {
        let g = grav(SymMat::zeros(3));
        let s = TwoBodyState::new(Vector3::new(2.0, 0.0, 0.0), Vector3::new(0.0, (0.5f64).sqrt(), 0.0));
        let d = twobody_drift(&s, &g).unwrap();
        assert!((d[3] + 0.25).abs() < 1e-15);
        assert_eq!(&d[..3], &[0.0, (0.5f64).sqrt(), 0.0]);

        let mut rng = RngStream::new(20, 0);
        for _ in 0..100 {
            let mut s = rand_state(&mut rng);
            s.r /= s.r.norm();
            let d = twobody_drift(&s, &g).unwrap();
            for i in 0..3 {
                assert!((d[3 + i] + s.r[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn drift_rejects_singularity() {
        let g = grav(SymMat::zeros(3));
        let s = TwoBodyState::new(Vector3::new(1e-4, 0.0, 0.0), Vector3::zeros());
        assert!(matches!(twobody_drift(&s, &g), Err(Error::Singularity { .. })));
        let model = TwoBodySde::new(g).unwrap();
        assert!(model.check_state(&[f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn grav_model_validation() {
        assert!(GravModel::new(0.0, SymMat::zeros(3), None, 1.0).is_err());
        assert!(GravModel::new(1.0, SymMat::zeros(2), None, 1.0).is_err());
        assert!(GravModel::new(1.0, SymMat::from_diagonal(&[1.0, -1.0, 1.0]).unwrap(), None, 1.0).is_err());
        assert_eq!(GravModel::new(1.0, SymMat::zeros(3), None, 7.0).unwrap().r_min(), 7e-3);
        // general symmetric Q is fine for the formulas but not for the sampler
        let q = SymMat::from_rows(&[vec![2.0, 0.5, 0.0], vec![0.5, 2.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let g = grav(q);
        assert!(matches!(TwoBodySde::new(g), Err(Error::NonDiagonalNoise { .. })));
    }

    #[test]
    fn h_examples() {
        let s = TwoBodyState::new(Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0));
        assert_eq!(h_invariant(&s).value, 1.0);
        let s = TwoBodyState::new(Vector3::new(1.0, 2.0, 3.0), Vector3::new(-2.0, -4.0, -6.0));
        assert_eq!(h_invariant(&s).value, 0.0);
    }

    #[test]
    fn lagrange_identity_random_states() {
        let mut rng = RngStream::new(21, 0);
        for _ in 0..10_000 {
            let s = rand_state(&mut rng);
            let h = h_value(&s);
            let c = s.r.cross(&s.rdot).norm_squared();
            let scale = s.r.norm_squared() * s.rdot.norm_squared();
            assert!((h - c).abs() <= LAGRANGE_TOL * scale * 10.0);
        }
    }

    #[test]
    fn h_derivatives_match_finite_differences() {
        let mut rng = RngStream::new(22, 0);
        for _ in 0..100 {
            let s = rand_state(&mut rng).to_array();
            let (g, h) = derivative_mismatch(&HInvariant, &s, 1e-4);
            assert!(g.unwrap() < 1e-6, "gradient {g:?}");
            assert!(h.unwrap() < 1e-6, "hessian {h:?}");
        }
    }

    #[test]
    fn hessian_is_symmetric_and_velocity_block_is_projector() {
        let mut rng = RngStream::new(23, 0);
        for _ in 0..1000 {
            let s = rand_state(&mut rng);
            let hh = h_invariant(&s).hessian_half;
            assert_eq!((hh - hh.transpose()).amax(), 0.0);
            let b: Matrix3<f64> = hh.fixed_view::<3, 3>(3, 3).into_owned();
            assert!((b - velocity_block(&s)).amax() < 1e-14);
            // rank ≤ 2 and PSD: r is in the null space
            assert!((b * s.r).norm() < 1e-12 * s.r.norm().powi(3).max(1.0));
            let eig = b.symmetric_eigenvalues();
            assert!(eig.min() > -1e-12 * s.r.norm_squared());
        }
    }

    #[test]
    fn v_vector_examples_and_identities() {
        let s = TwoBodyState::new(Vector3::new(1.0, 0.0, 0.0), Vector3::new(3.0, 2.0, 0.0));
        assert_eq!(v_vector(&s), Vector3::new(0.0, 2.0, 0.0));
        let s = TwoBodyState::new(Vector3::new(1.0, 2.0, 3.0), Vector3::new(0.5, 1.0, 1.5));
        assert!(v_vector(&s).norm() < 1e-14);

        let mut rng = RngStream::new(24, 0);
        for _ in 0..10_000 {
            let s = rand_state(&mut rng);
            let v = v_vector(&s);
            let lhs = v.norm_squared();
            let rhs = h_value(&s) * s.r.norm_squared();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.max(rhs).max(1e-300));
            assert!(v.dot(&s.r).abs() <= 1e-10 * v.norm() * s.r.norm() + 1e-300);
        }
    }

    #[test]
    fn mu_h_rate_examples() {
        let i3 = SymMat::identity(3);
        assert_eq!(mu_h_rate_exact(&i3, &SymMat::zeros(3)).unwrap(), 0.0);
        let q = SymMat::from_diagonal(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(mu_h_rate_exact(&i3, &q).unwrap(), 12.0);
    }

    #[test]
    fn mu_h_bounds_examples() {
        let (lo, hi) = mu_h_rate_bounds(1.0, &diag_q()).unwrap();
        assert!((lo - 0.005).abs() < 1e-15 && (hi - 0.008).abs() < 1e-15);
        let (lo, hi) = mu_h_rate_bounds(2.5, &SymMat::scaled_identity(3, 0.3)).unwrap();
        assert_eq!(lo, hi);
        assert!((lo - 2.0 * 0.3 * 2.5).abs() < 1e-15);
        assert!(mu_h_rate_bounds(-1.0, &diag_q()).is_err());
    }

    #[test]
    fn mu_h_rate_contained_for_random_second_moments() {
        let mut rng = RngStream::new(25, 0);
        for _ in 0..1000 {
            let a = Matrix3::from_fn(|_, _| rng.standard_normal());
            let e = SymMat::from_matrix3(&(a * a.transpose())).unwrap();
            let b = Matrix3::from_fn(|_, _| rng.standard_normal());
            let q = SymMat::from_matrix3(&(b * b.transpose())).unwrap();
            let rate = mu_h_rate_exact(&e, &q).unwrap();
            let (lo, hi) = mu_h_rate_bounds(e.trace(), &q).unwrap();
            let tol = 1e-12 * (hi.abs() + 1.0);
            assert!(lo - tol <= rate && rate <= hi + tol, "{lo} {rate} {hi}");
        }
    }

    #[test]
    fn r_h_bounds_examples() {
        let (lo, hi) = r_h_rate_bounds(1.0, &diag_q()).unwrap();
        assert!((lo - 0.018).abs() < 1e-15 && (hi - 0.036).abs() < 1e-15);
        let p = 1e-3;
        let (lo, hi) = r_h_rate_bounds(3.0, &SymMat::scaled_identity(3, p)).unwrap();
        assert_eq!(lo, hi);
        assert!((lo - ISOTROPIC_RH_FACTOR_DERIVED * p * 3.0).abs() < 1e-15);
    }

    fn ensemble(states: Vec<TwoBodyState>) -> Ensemble {
        Ensemble::from_states(0.0, states.iter().map(|s| s.to_array().to_vec()).collect(), 0).unwrap()
    }

    #[test]
    fn r_h_rate_special_cases() {
        let mut rng = RngStream::new(26, 0);
        let states: Vec<_> = (0..50).map(|_| rand_state(&mut rng)).collect();
        let ens = ensemble(states.clone());
        assert_eq!(r_h_rate_exact(&ens, &grav(SymMat::zeros(3))).unwrap(), 0.0);

        let parallel: Vec<_> = states.iter().map(|s| TwoBodyState::new(s.r, 2.0 * s.r)).collect();
        let rate = r_h_rate_exact(&ensemble(parallel), &grav(diag_q())).unwrap();
        assert!(rate.abs() < 1e-12);

        let p = 1e-3;
        let rate = r_h_rate_exact(&ens, &grav(SymMat::scaled_identity(3, p))).unwrap();
        let mean_vv: f64 = states.iter().map(|s| v_vector(s).norm_squared()).sum::<f64>() / 50.0;
        assert!((rate - 8.0 * p * mean_vv).abs() < 1e-12 * rate);
    }

    #[test]
    fn r_h_rate_rejects_singular_samples() {
        let mut states = vec![TwoBodyState::new(Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)); 3];
        states[2].r = Vector3::new(1e-6, 0.0, 0.0);
        assert!(matches!(
            r_h_rate_exact(&ensemble(states), &grav(diag_q())),
            Err(Error::Singularity { path: 2, .. })
        ));
    }

    #[test]
    fn r_h_forms_agree_and_are_contained() {
        let mut rng = RngStream::new(27, 0);
        for _ in 0..1000 {
            let states: Vec<_> = (0..8).map(|_| rand_state(&mut rng)).collect();
            let b = Matrix3::from_fn(|_, _| rng.standard_normal());
            let q = SymMat::from_matrix3(&(b * b.transpose())).unwrap();
            let g = grav(q.clone());
            let rate = r_h_rate_exact(&ensemble(states.clone()), &g).unwrap();
            let ehr = states.iter().map(|s| h_value(s) * s.r.norm_squared()).sum::<f64>() / 8.0;
            let (lo, hi) = r_h_rate_bounds(ehr, &q).unwrap();
            let tol = 1e-10 * hi.abs();
            assert!(lo - tol <= rate && rate <= hi + tol, "{lo} {rate} {hi}");
        }
    }

    #[test]
    fn upper_bound_attained_on_eigenvectors() {
        let q = diag_q();
        let qm = q.to_matrix3().unwrap();
        // r along the λ_min axis, ṙ (hence v) along the λ_max axis
        let s = TwoBodyState::new(Vector3::new(0.0, 1.3, 0.0), Vector3::new(0.7, 0.0, 0.0));
        let (integrand, _) = r_h_integrands(&s, &qm);
        let (_, hi) = r_h_rate_bounds(h_value(&s) * s.r.norm_squared(), &q).unwrap();
        assert!((integrand - hi).abs() < 1e-10);
        // and the μ̇_h upper bound with r along λ_min
        let (_, hi) = mu_h_rate_bounds(s.r.norm_squared(), &q).unwrap();
        assert!((mu_h_integrand(&s, &qm) - hi).abs() < 1e-12);
    }
}
