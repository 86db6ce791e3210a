//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by the statistical machinery and the CLI layer.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or configuration (bad probability, dimension
    /// mismatch, malformed config file, ...).
    #[error("invalid argument: {0}")]
    Domain(String),

    /// Problem with input data (missing column, unparsable value, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Kernel density estimate vanished, so studentization is impossible.
    #[error("singular density in group {group}{}", prob.map(|p| format!(" at p = {p}")).unwrap_or_default())]
    SingularDensity { group: usize, prob: Option<f64> },

    /// The order-statistic interval of the interval-based estimator collapsed.
    #[error("degenerate order-statistic interval in group {group} at p = {prob}")]
    DegenerateInterval { group: usize, prob: f64 },

    /// A contrast has non-positive estimated variance; no correlation matrix
    /// can be formed for it.
    #[error("contrast {row} has non-positive estimated variance")]
    SingularContrast { row: usize },

    /// A covariance or correlation matrix failed a structural check.
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    /// Too many resampling replicates failed to produce a statistic.
    #[error("{failed} of {total} resampling replicates failed (more than 5%)")]
    ResamplingFailed { failed: usize, total: usize },

    /// Bisection was called with a bracket that does not enclose the target.
    #[error("bracket violation: {0}")]
    BracketViolation(String),

    /// I/O failure while reading or writing files.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            _ => 4,
        }
    }

    /// Whether this error may be treated as a per-replicate numerical
    /// failure inside a resampling or simulation loop (as opposed to a
    /// configuration problem that would fail every replicate).
    pub fn is_replicate_failure(&self) -> bool {
        matches!(
            self,
            Error::SingularDensity { .. }
                | Error::DegenerateInterval { .. }
                | Error::SingularContrast { .. }
                | Error::InvalidCovariance(_)
                | Error::ResamplingFailed { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
