use thiserror::Error;

/// Errors raised by the network core, replay memory, agents and environments.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("index {index} out of range for length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("value iteration did not converge within {iterations} sweeps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
