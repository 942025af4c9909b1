use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (max |M_ij - M_ji| = {0:e})")]
    NotSymmetric(f64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("noise covariance must be diagonal (white-noise components are independent); off-diagonal entry ({row},{col}) = {value:e}")]
    NonDiagonalNoise { row: usize, col: usize, value: f64 },

    #[error("path {path} entered the exclusion radius: |r| = {radius:e} < r_min = {r_min:e}")]
    Singularity { path: usize, radius: f64, r_min: f64 },

    #[error("{diverged} of {total} paths diverged (limit {limit})")]
    Divergence {
        diverged: usize,
        total: usize,
        limit: usize,
    },

    #[error("derivation mismatch in {what}: |diff| = {diff:e} exceeds {tol:e}")]
    DerivationMismatch { what: String, diff: f64, tol: f64 },

    #[error("moment model breakdown at t = {t}: {reason}")]
    ModelBreakdown { t: f64, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error at {}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// Process exit code for the CLI: 2 for usage/config problems, 3 for numerical aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Singularity { .. }
            | Error::Divergence { .. }
            | Error::DerivationMismatch { .. }
            | Error::ModelBreakdown { .. }
            | Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}
