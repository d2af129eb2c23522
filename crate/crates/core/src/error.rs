use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A distribution or configuration parameter is out of its valid range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input data violates a precondition (overlapping events, short traces, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A caller broke an API contract (illegal action, shape mismatch, ...).
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A gradient step produced a non-finite loss.
    #[error("training diverged at batch index {batch_index}")]
    TrainingDiverged { batch_index: usize },

    /// A persisted file does not match its declared format.
    #[error("format error in {path} at offset {offset}: {detail}")]
    Format {
        path: String,
        offset: u64,
        detail: String,
    },

    /// Bisection could not bracket the requested target.
    #[error("calibration failed: target {target} not attainable, bracket [{lo_rate}, {hi_rate}] gives fractions [{lo_frac}, {hi_frac}]")]
    Calibration {
        target: f64,
        lo_rate: f64,
        hi_rate: f64,
        lo_frac: f64,
        hi_frac: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
