//! Ensemble statistics: sample moments, invariant moments, standard errors,
//! and finite-difference rates of expectation series.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{SymMat, VecN};
use crate::sde::Ensemble;

/// A scalar function of the state, with optional analytic derivatives.
pub trait InvariantFn: Sync {
    fn value(&self, s: &[f64]) -> f64;

    /// Gradient `U_s`.
    fn gradient(&self, _s: &[f64]) -> Option<VecN> {
        None
    }

    /// Half the Hessian, `H_U = ½ ∂²U/∂s∂sᵀ`.
    fn hessian_half(&self, _s: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// Worst relative mismatch between the analytic derivatives of `u` and central
/// differences of its value at `s`. Returns `(gradient_err, hessian_err)`; an
/// entry is `None` when `u` does not supply that derivative.
pub fn derivative_mismatch(u: &dyn InvariantFn, s: &[f64], step: f64) -> (Option<f64>, Option<f64>) {
    let n = s.len();
    let mut x = s.to_vec();
    let mut eval = |i: usize, di: f64, j: usize, dj: f64| {
        x.copy_from_slice(s);
        x[i] += di;
        x[j] += dj;
        u.value(&x)
    };
    let grad_err = u.gradient(s).map(|g| {
        let fd: Vec<f64> = (0..n)
            .map(|i| (eval(i, step, i, 0.0) - eval(i, -step, i, 0.0)) / (2.0 * step))
            .collect();
        let scale = g.amax().max(1e-300);
        (0..n).map(|i| (g[i] - fd[i]).abs()).fold(0.0, f64::max) / scale
    });
    let hess_err = u.hessian_half(s).map(|h| {
        let mut worst = 0.0_f64;
        let scale = h.amax().max(1e-300);
        for i in 0..n {
            for j in 0..n {
                let d2 = (eval(i, step, j, step) - eval(i, step, j, -step) - eval(i, -step, j, step)
                    + eval(i, -step, j, -step))
                    / (4.0 * step * step);
                worst = worst.max((h[(i, j)] - 0.5 * d2).abs());
            }
        }
        worst / scale
    });
    (grad_err, hess_err)
}

/// Moments of an invariant `U` over an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantStats {
    /// `u1 = E[U]`.
    pub mean: f64,
    /// `u2 = E[U²]`.
    pub second_moment: f64,
    /// `cov[U]`, unbiased.
    pub variance: f64,
    pub mean_se: f64,
    /// Standard error of the sample variance.
    pub variance_se: f64,
}

impl InvariantStats {
    pub fn std_dev(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }

    /// `mean ± 3·std`: population spread band.
    pub fn band_3sigma(&self) -> (f64, f64) {
        (self.mean - 3.0 * self.std_dev(), self.mean + 3.0 * self.std_dev())
    }
}

/// Statistics of one ensemble snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentStats {
    pub t: f64,
    pub samples: usize,
    pub mean: VecN,
    pub cov: SymMat,
    /// Standard error of each mean component, `std/√N`.
    pub mean_se: VecN,
    pub invariant: Option<InvariantStats>,
}

impl MomentStats {
    pub fn std_dev(&self, i: usize) -> f64 {
        self.cov.get(i, i).max(0.0).sqrt()
    }

    pub fn band_3sigma(&self, i: usize) -> (f64, f64) {
        (
            self.mean[i] - 3.0 * self.std_dev(i),
            self.mean[i] + 3.0 * self.std_dev(i),
        )
    }
}

/// Sample mean, unbiased covariance, and optional invariant moments.
pub fn ensemble_stats(ens: &Ensemble, u: Option<&dyn InvariantFn>) -> Result<MomentStats> {
    let n = ens.live_count();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "statistics need at least 2 live paths, got {n}"
        )));
    }
    let dim = ens.dim();
    let nf = n as f64;
    let mut mean = DVector::zeros(dim);
    for s in ens.live_states() {
        for i in 0..dim {
            mean[i] += s[i];
        }
    }
    mean /= nf;
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for s in ens.live_states() {
        for i in 0..dim {
            let di = s[i] - mean[i];
            for j in i..dim {
                cov[(i, j)] += di * (s[j] - mean[j]);
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            cov[(i, j)] /= nf - 1.0;
            cov[(j, i)] = cov[(i, j)];
        }
    }
    let mean_se = DVector::from_fn(dim, |i, _| (cov[(i, i)] / nf).sqrt());
    let invariant = u.map(|u| {
        let values: Vec<f64> = ens.live_states().map(|s| u.value(s)).collect();
        invariant_stats(&values)
    });
    Ok(MomentStats {
        t: ens.time(),
        samples: n,
        mean,
        cov: SymMat::new(cov)?,
        mean_se,
        invariant,
    })
}

/// Moments of a scalar sample, with standard errors of the mean and variance.
pub fn invariant_stats(values: &[f64]) -> InvariantStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let second_moment = values.iter().map(|v| v * v).sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    let variance = m2 / (n - 1.0);
    let pop_var = m2 / n;
    let m4 = m4 / n;
    // Var(s²) ≈ (μ4 − (N−3)/(N−1) σ⁴) / N
    let var_of_var = ((m4 - (n - 3.0) / (n - 1.0) * pop_var * pop_var) / n).max(0.0);
    InvariantStats {
        mean,
        second_moment,
        variance,
        mean_se: (variance / n).sqrt(),
        variance_se: var_of_var.sqrt(),
    }
}

/// Mean and standard error of a sample.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let s = invariant_stats(values);
    (s.mean, s.mean_se)
}

/// Time-ordered ensemble statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MomentSeries {
    pub entries: Vec<MomentStats>,
}

impl MomentSeries {
    pub fn push(&mut self, entry: MomentStats) {
        self.entries.push(entry);
    }

    pub fn times(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.t).collect()
    }

    pub fn select<F: Fn(&MomentStats) -> f64>(&self, f: F) -> Vec<f64> {
        self.entries.iter().map(f).collect()
    }
}

/// d/dt estimates of a selected quantity along a series.
pub fn finite_difference_expectation_rate<F>(series: &MomentSeries, select: F) -> Result<Vec<f64>>
where
    F: Fn(&MomentStats) -> f64,
{
    central_differences(&series.times(), &series.select(select))
}

/// Central differences at interior points, one-sided at the ends.
/// Requires at least 3 uniformly spaced points.
pub fn central_differences(times: &[f64], values: &[f64]) -> Result<Vec<f64>> {
    let n = times.len();
    if n != values.len() {
        return Err(Error::Dimension(format!("{n} times but {} values", values.len())));
    }
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "finite differences need at least 3 points, got {n}"
        )));
    }
    let h = times[1] - times[0];
    if !(h > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
        return Err(Error::InvalidArgument(
            "finite differences need a uniform increasing grid".into(),
        ));
    }
    let mut out = Vec::with_capacity(n);
    out.push((values[1] - values[0]) / h);
    for k in 1..n - 1 {
        out.push((values[k + 1] - values[k - 1]) / (2.0 * h));
    }
    out.push((values[n - 1] - values[n - 2]) / h);
    Ok(out)
}
