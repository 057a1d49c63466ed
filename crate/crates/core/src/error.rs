use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("consumption must be positive, got {0}")]
    NonPositiveConsumption(f64),

    #[error("bond price must be positive, got {0}")]
    NonPositivePrice(f64),

    #[error("stationary distribution did not converge after {iterations} iterations (residual {residual:e})")]
    StationaryNotConverged { iterations: usize, residual: f64 },

    #[error("equilibrium did not converge after {iterations} iterations (value residual {value_residual:e}, price residual {price_residual:e})")]
    NotConverged {
        iterations: usize,
        value_residual: f64,
        price_residual: f64,
        /// (value, price) sup-norm residual per iteration
        history: Vec<(f64, f64)>,
    },

    #[error("risk-sensitive adjustment is not finite (theta = {theta}); theta is below its breakdown value")]
    Breakdown { theta: f64 },

    #[error("distortion does not integrate to one: E[m|y] = {0}")]
    NotNormalized(f64),

    #[error("not enough qualifying subsample windows: found {found}, need {needed}")]
    TooFewWindows { found: usize, needed: usize },

    #[error("panel contains no default events")]
    NoDefaults,

    #[error("long-run variance estimate is not positive ({0:e})")]
    DegenerateVariance(f64),

    #[error("bond grid point {0} is out of range")]
    OffGrid(usize),

    #[error("artifact version mismatch: file has {found}, this build reads {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serialization(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

impl From<bincode::Error> for Error {
    fn from(e: bincode::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
