//! Python bindings: rigid-body moment propagation, two-body rate bounds, the
//! Gaussian third moment, and whole scenario runs.

use nalgebra::{DMatrix, Vector3};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use invariant_moments::config::{ScenarioConfig, RIGIDBODY_REFERENCE, TWOBODY_DEFAULT, TWOBODY_ISOTROPIC};
use invariant_moments::gaussian::{self, GaussianBelief};
use invariant_moments::linalg::{SymMat, VecN};
use invariant_moments::report::write_outputs;
use invariant_moments::rigidbody::{self, InertiaModel, RigidBodyMoments};
use invariant_moments::sde::TimeGrid;
use invariant_moments::twobody::{self, TwoBodyState};
use invariant_moments::{harness, report, Error};

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn sym(rows: Vec<Vec<f64>>) -> PyResult<SymMat> {
    SymMat::from_rows(&rows).map_err(to_py)
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn inertia(j: [f64; 3]) -> PyResult<InertiaModel> {
    InertiaModel::new(j).map_err(to_py)
}

/// Kinetic energy ½ωᵀJω for principal moments `j`.
#[pyfunction]
fn kinetic_energy(j: [f64; 3], omega: [f64; 3]) -> PyResult<f64> {
    Ok(rigidbody::kinetic_energy(&Vector3::from(omega), &inertia(j)?))
}

/// State-independent growth rate of the mean kinetic energy, ½tr(J⁻¹Q).
#[pyfunction]
fn ke_mean_rate(j: [f64; 3], q_diag: [f64; 3]) -> PyResult<f64> {
    let q = SymMat::from_diagonal(&q_diag).map_err(to_py)?;
    Ok(rigidbody::ke_mean_rate(&inertia(j)?, &q))
}

/// Integrates the rigid-body moment equations; returns a dict of per-time lists.
#[pyfunction]
fn propagate_rigidbody<'py>(
    py: Python<'py>,
    j: [f64; 3],
    q_diag: [f64; 3],
    mean: [f64; 3],
    cov: Vec<Vec<f64>>,
    dt: f64,
    t_final: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let inertia = inertia(j)?;
    let q = SymMat::from_diagonal(&q_diag).map_err(to_py)?;
    let belief = GaussianBelief::new(VecN::from_column_slice(&mean), sym(cov)?).map_err(to_py)?;
    let m0 = RigidBodyMoments::from_belief(&belief, &inertia).map_err(to_py)?;
    let grid = TimeGrid::from_horizon(dt, t_final).map_err(to_py)?;
    let traj = py
        .detach(|| rigidbody::propagate_moments(&m0, &inertia, &q, &grid))
        .map_err(to_py)?;

    let out = PyDict::new(py);
    out.set_item("t", grid.times())?;
    out.set_item(
        "mean",
        traj.iter()
            .map(|m| m.mean.iter().copied().collect::<Vec<_>>())
            .collect::<Vec<_>>(),
    )?;
    out.set_item(
        "cov",
        traj.iter().map(|m| rows_of(m.cov.as_matrix())).collect::<Vec<_>>(),
    )?;
    out.set_item("ke_mean", traj.iter().map(|m| m.ke_mean).collect::<Vec<_>>())?;
    out.set_item("ke_corr", traj.iter().map(|m| m.ke_corr).collect::<Vec<_>>())?;
    out.set_item("ke_cov", traj.iter().map(|m| m.ke_cov).collect::<Vec<_>>())?;
    Ok(out)
}

/// E[X_i X_j X_k] for a Gaussian with the given mean and covariance rows.
#[pyfunction]
fn gaussian_third_moment(mean: Vec<f64>, cov: Vec<Vec<f64>>, i: usize, j: usize, k: usize) -> PyResult<f64> {
    let belief = GaussianBelief::new(VecN::from_vec(mean), sym(cov)?).map_err(to_py)?;
    gaussian::gaussian_third_moment(i, j, k, &belief).map_err(to_py)
}

/// `(h, gradient, ½ Hessian)` of the squared specific angular momentum.
#[pyfunction]
fn h_invariant(r: [f64; 3], rdot: [f64; 3]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let ev = twobody::h_invariant(&TwoBodyState::new(Vector3::from(r), Vector3::from(rdot)));
    let hh = DMatrix::from_column_slice(6, 6, ev.hessian_half.as_slice());
    (ev.value, ev.gradient.to_vec(), rows_of(&hh))
}

/// Eigenvalue bounds on dE[h]/dt given E[|r|²].
#[pyfunction]
fn mu_h_rate_bounds(e_norm_r_sq: f64, q: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    twobody::mu_h_rate_bounds(e_norm_r_sq, &sym(q)?).map_err(to_py)
}

/// Eigenvalue bounds on dE[h²]/dt given E[h|r|²].
#[pyfunction]
fn r_h_rate_bounds(e_h_r_sq: f64, q: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    twobody::r_h_rate_bounds(e_h_r_sq, &sym(q)?).map_err(to_py)
}

/// JSON text of a bundled scenario: `rigidbody`, `twobody` or `twobody_isotropic`.
#[pyfunction]
fn bundled_config(name: &str) -> PyResult<&'static str> {
    match name {
        "rigidbody" => Ok(RIGIDBODY_REFERENCE),
        "twobody" => Ok(TWOBODY_DEFAULT),
        "twobody_isotropic" => Ok(TWOBODY_ISOTROPIC),
        other => Err(PyValueError::new_err(format!("no bundled scenario `{other}`"))),
    }
}

/// Result of a Monte Carlo scenario run.
#[pyclass(name = "RunReport", frozen)]
struct PyRunReport {
    inner: report::RunReport,
}

#[pymethods]
impl PyRunReport {
    #[getter]
    fn scenario(&self) -> &str {
        &self.inner.scenario
    }

    #[getter]
    fn columns(&self) -> Vec<String> {
        self.inner.columns.clone()
    }

    #[getter]
    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows.clone()
    }

    /// `(name, passed, detail)` per check.
    #[getter]
    fn checks(&self) -> Vec<(String, bool, String)> {
        self.inner
            .checks
            .iter()
            .map(|c| (c.name.clone(), c.passed, c.detail.clone()))
            .collect()
    }

    fn all_passed(&self) -> bool {
        self.inner.all_passed()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner
            .column(name)
            .ok_or_else(|| PyValueError::new_err(format!("no column `{name}`")))
    }

    /// The summary document as JSON text.
    fn summary_json(&self) -> String {
        self.inner.summary_json().to_string()
    }

    /// Writes the CSV and summary into `dir`; returns both paths.
    fn write(&self, dir: &str) -> PyResult<(String, String)> {
        let (c, j) = write_outputs(&self.inner, dir.as_ref()).map_err(to_py)?;
        Ok((c.display().to_string(), j.display().to_string()))
    }
}

/// Runs a scenario from JSON text, optionally overriding seed and sample count.
#[pyfunction]
#[pyo3(signature = (config_json, seed=None, samples=None))]
fn run_scenario(py: Python<'_>, config_json: &str, seed: Option<u64>, samples: Option<usize>) -> PyResult<PyRunReport> {
    let cfg = ScenarioConfig::from_json(config_json)
        .and_then(|c| c.with_seed(seed).with_samples(samples))
        .map_err(to_py)?;
    let inner = py.detach(|| harness::run_scenario(&cfg)).map_err(to_py)?;
    Ok(PyRunReport { inner })
}

#[pymodule]
fn invariant_moments_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(kinetic_energy, m)?)?;
    m.add_function(wrap_pyfunction!(ke_mean_rate, m)?)?;
    m.add_function(wrap_pyfunction!(propagate_rigidbody, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_third_moment, m)?)?;
    m.add_function(wrap_pyfunction!(h_invariant, m)?)?;
    m.add_function(wrap_pyfunction!(mu_h_rate_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(r_h_rate_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(bundled_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_class::<PyRunReport>()?;
    Ok(())
}
