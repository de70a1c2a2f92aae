use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the relay design library and the campaign harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A noise covariance that should be positive definite failed its Cholesky factorization.
    #[error("noise covariance is numerically singular or indefinite")]
    IllConditionedNoiseCovariance,

    /// Positive power was requested but every eigenmode has zero gain.
    #[error("no usable eigenmode: all eigenvalues are zero but {power} power must be allocated")]
    NoUsableEigenmode { power: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empirical CDF requested for an empty sample set")]
    EmptySamples,

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

    #[error("JSON error at {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
