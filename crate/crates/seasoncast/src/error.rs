//! Crate-wide error type and result alias.

use thiserror::Error;

/// Errors surfaced by the forecasting engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("window too short: need at least {min} values, got {len}")]
    WindowTooShort { len: usize, min: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("ensemble needs at least 2 members, got {0}")]
    TooFewMembers(usize),

    #[error("empty series: {0}")]
    EmptySeries(String),

    #[error("insufficient history for `{feature}` at t={t}: window starts at week {needed}, series starts at {available}")]
    InsufficientHistory {
        feature: String,
        t: i64,
        needed: i64,
        available: i64,
    },

    #[error("insufficient forecast for `{feature}` at t={t}: {reason}")]
    InsufficientForecast {
        feature: String,
        t: i64,
        reason: String,
    },

    #[error("invalid quantile {0}: must lie strictly inside (0, 1)")]
    InvalidQuantile(f64),

    #[error("degenerate split: {0} partition is empty")]
    DegenerateSplit(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("all targets below {0} in magnitude; MAPE undefined")]
    AllTargetsNearZero(f64),

    #[error("horizon mismatch: expected {expected}, got {actual}")]
    HorizonMismatch { expected: usize, actual: usize },

    #[error("zero base metric `{0}`: error reduction undefined")]
    ZeroBaseMetric(&'static str),

    #[error("scenario keys do not match: {0}")]
    KeyMismatch(String),

    #[error("config mismatch: checkpoint was trained with config hash {checkpoint}, runtime config hashes to {runtime}")]
    ConfigMismatch { checkpoint: String, runtime: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 3 for data/config problems, 4 for
    /// numeric failures. Usage errors (2) are handled by the argument parser.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteLoss { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
