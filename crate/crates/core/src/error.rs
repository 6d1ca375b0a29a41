use thiserror::Error;

pub type Result<T, E = MtemError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MtemError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite stability functional at x = {point:?}")]
    Evaluation { point: Vec<f64> },

    #[error("bracket [{lo}, {hi}] does not straddle target {target}")]
    Bracket { lo: f64, hi: f64, target: f64 },

    #[error("step produced a non-finite state")]
    NonFinite,

    #[error("estimation failed: {0}")]
    Estimation(String),
}

impl MtemError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        MtemError::Input(msg.into())
    }
}
