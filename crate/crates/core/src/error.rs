use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("kernel family {0} has no analytic high-order path and the fallback is disabled")]
    UnsupportedKernel(String),

    #[error("simulation diverged at step {step} (|x|_inf = {norm:e})")]
    Diverged { step: u64, norm: f64 },

    #[error("system is not stable: {0}")]
    NotStable(String),

    #[error("linear solve is near singular (residual {residual:e})")]
    NearSingular { residual: f64 },

    #[error("no convergence after {iterations} iterations (best delta {best_delta}, residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        best_delta: f64,
        residual: f64,
    },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("non-positive value {value} at index {index}")]
    NonPositiveValue { index: usize, value: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name used in CLI error JSON and FFI codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::InsufficientData(_) => "InsufficientData",
            Error::UnsupportedKernel(_) => "UnsupportedKernel",
            Error::Diverged { .. } => "Diverged",
            Error::NotStable(_) => "NotStable",
            Error::NearSingular { .. } => "NearSingular",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::NonPositiveValue { .. } => "NonPositiveValue",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
