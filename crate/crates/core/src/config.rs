//! JSON scenario configuration.
//!
//! ```json
//! {
//!   "scenario": "rigidbody",
//!   "inertia": [10.0, 12.0, 14.0],
//!   "noise_cov": [0.005, 0.002, 0.003],
//!   "initial_mean": [0.02, 0.02, 0.02],
//!   "initial_cov": [2e-5, 2e-5, 2e-5],
//!   "dt": 0.1,
//!   "t_final": 100.0,
//!   "n_samples": 10000,
//!   "master_seed": 20240101
//! }
//! ```
//!
//! Matrices may be given as a diagonal list or as a full list of rows.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::linalg::{SymMat, VecN};
use crate::noise::check_noise_intensity;
use crate::rigidbody::InertiaModel;
use crate::sde::{Scheme, TimeGrid};
use crate::twobody::GravModel;

/// Bundled scenario with the reference rigid-body parameters.
pub const RIGIDBODY_REFERENCE: &str = include_str!("../configs/rigidbody_reference.json");
/// Bundled unit circular orbit with small anisotropic perturbations.
pub const TWOBODY_DEFAULT: &str = include_str!("../configs/twobody_default.json");
/// Bundled unit circular orbit with isotropic perturbations `Q = pI`.
pub const TWOBODY_ISOTROPIC: &str = include_str!("../configs/twobody_isotropic.json");

pub const DEFAULT_OUTPUT_DIR: &str = "out";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Rigidbody,
    Twobody,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Rigidbody => "rigidbody",
            ScenarioKind::Twobody => "twobody",
        }
    }

    fn state_dim(self) -> usize {
        match self {
            ScenarioKind::Rigidbody => 3,
            ScenarioKind::Twobody => 6,
        }
    }
}

/// A validated scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    /// Principal moments, rigid body only.
    pub inertia: Option<[f64; 3]>,
    /// Gravitational parameter, two-body only.
    pub mu_grav: Option<f64>,
    /// Exclusion radius; two-body default is `1e-3 ‖r₀‖`.
    pub r_min: Option<f64>,
    /// White-noise intensity `Q` (diagonal).
    pub noise_cov: SymMat,
    pub initial: GaussianBelief,
    pub dt: f64,
    pub t_final: f64,
    pub n_samples: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub scheme: Scheme,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Option<ScenarioKind>,
    inertia: Option<Value>,
    mu_grav: Option<f64>,
    r_min: Option<f64>,
    noise_cov: Option<Value>,
    initial_mean: Option<Vec<f64>>,
    initial_cov: Option<Value>,
    dt: Option<f64>,
    t_final: Option<f64>,
    n_samples: Option<u64>,
    master_seed: Option<u64>,
    output_dir: Option<PathBuf>,
    scheme: Option<Scheme>,
}

fn required<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
}

/// Parses a diagonal list or a list of rows into an `n×n` symmetric matrix.
fn parse_matrix(v: &Value, key: &str, n: usize) -> Result<SymMat> {
    let bad = || {
        Error::Config(format!(
            "`{key}` must be a list of {n} numbers or {n} rows of {n} numbers"
        ))
    };
    let arr = v.as_array().ok_or_else(bad)?;
    if arr.iter().all(Value::is_number) {
        let d: Vec<f64> = arr.iter().map(|x| x.as_f64().unwrap()).collect();
        if d.len() != n {
            return Err(Error::Dimension(format!(
                "`{key}` has {} diagonal entries, expected {n}",
                d.len()
            )));
        }
        return SymMat::from_diagonal(&d);
    }
    let rows: Vec<Vec<f64>> = arr
        .iter()
        .map(|row| {
            row.as_array()
                .and_then(|r| r.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                .ok_or_else(bad)
        })
        .collect::<Result<_>>()?;
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension(format!(
            "`{key}` is {}x{}, expected {n}x{n}",
            rows.len(),
            rows.first().map_or(0, Vec::len)
        )));
    }
    SymMat::from_rows(&rows)
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON config: {e}")))?;
        let scenario = required(raw.scenario, "scenario")?;
        let n = scenario.state_dim();

        let inertia = match scenario {
            ScenarioKind::Rigidbody => {
                let j = parse_matrix(&required(raw.inertia, "inertia")?, "inertia", 3)?;
                if let Some((i, k, v)) = j.first_off_diagonal() {
                    return Err(Error::Config(format!(
                        "inertia must be diagonal (body axes aligned with principal axes); entry ({i},{k}) = {v}"
                    )));
                }
                let d = j.diagonal();
                InertiaModel::new([d[0], d[1], d[2]])?;
                Some([d[0], d[1], d[2]])
            }
            ScenarioKind::Twobody => None,
        };
        let mu_grav = match scenario {
            ScenarioKind::Twobody => Some(required(raw.mu_grav, "mu_grav")?),
            ScenarioKind::Rigidbody => None,
        };

        let noise_cov = parse_matrix(&required(raw.noise_cov, "noise_cov")?, "noise_cov", 3)?;
        check_noise_intensity(&noise_cov)?;

        let mean = required(raw.initial_mean, "initial_mean")?;
        if mean.len() != n {
            return Err(Error::Dimension(format!(
                "`initial_mean` has {} entries, a {} state has {n}",
                mean.len(),
                scenario.name()
            )));
        }
        let cov = parse_matrix(&required(raw.initial_cov, "initial_cov")?, "initial_cov", n)?;
        if cov.eig_bounds().0 < -1e-12 * cov.as_matrix().amax().max(f64::MIN_POSITIVE) {
            return Err(Error::Config("`initial_cov` must be positive semidefinite".into()));
        }
        let initial = GaussianBelief::new(VecN::from_vec(mean), cov)?;

        let dt = required(raw.dt, "dt")?;
        let t_final = required(raw.t_final, "t_final")?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("`dt` must be positive, got {dt}")));
        }
        if !(t_final >= dt) {
            return Err(Error::Config(format!("`t_final` must be at least dt, got {t_final}")));
        }
        TimeGrid::from_horizon(dt, t_final).map_err(|e| Error::Config(e.to_string()))?;

        let n_samples = required(raw.n_samples, "n_samples")?;
        if n_samples < 2 {
            return Err(Error::Config(format!(
                "`n_samples` must be at least 2, got {n_samples}"
            )));
        }

        let cfg = Self {
            scenario,
            inertia,
            mu_grav,
            r_min: raw.r_min,
            noise_cov,
            initial,
            dt,
            t_final,
            n_samples: n_samples as usize,
            master_seed: required(raw.master_seed, "master_seed")?,
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR)),
            scheme: raw.scheme.unwrap_or(match scenario {
                ScenarioKind::Rigidbody => Scheme::EulerMaruyama,
                ScenarioKind::Twobody => Scheme::SplitRk4,
            }),
        };
        if scenario == ScenarioKind::Twobody {
            cfg.grav_model()?;
        }
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::from_horizon(self.dt, self.t_final)
    }

    pub fn inertia_model(&self) -> Result<InertiaModel> {
        let j = self
            .inertia
            .ok_or_else(|| Error::Config("scenario has no `inertia`".into()))?;
        InertiaModel::new(j)
    }

    pub fn grav_model(&self) -> Result<GravModel> {
        let mu = self
            .mu_grav
            .ok_or_else(|| Error::Config("scenario has no `mu_grav`".into()))?;
        let r0 = self.initial.mean().rows(0, 3).norm();
        GravModel::new(mu, self.noise_cov.clone(), self.r_min, r0)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.master_seed = s;
        }
        self
    }

    pub fn with_samples(mut self, n: Option<usize>) -> Result<Self> {
        if let Some(n) = n {
            if n < 2 {
                return Err(Error::Config(format!("sample count must be at least 2, got {n}")));
            }
            self.n_samples = n;
        }
        Ok(self)
    }

    pub fn with_output_dir(mut self, dir: Option<PathBuf>) -> Self {
        if let Some(d) = dir {
            self.output_dir = d;
        }
        self
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ScenarioConfig::from_json(&text)
}
