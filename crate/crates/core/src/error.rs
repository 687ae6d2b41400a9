use thiserror::Error;

/// Errors raised by the simulation and optimization routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("site count mismatch: {left} vs {right}")]
    SiteMismatch { left: usize, right: usize },

    #[error("system of {num_sites} sites exceeds the dense limit of {limit} sites")]
    TooLarge { num_sites: usize, limit: usize },

    #[error("gate is not unitary (deviation {deviation:.3e})")]
    NonUnitary { deviation: f64 },

    #[error("state has zero norm")]
    ZeroNorm,

    #[error("{what} did not converge after {iterations} iterations (last change {last_delta:.3e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        last_delta: f64,
    },

    #[error("operation not supported by this backend: {0}")]
    Unsupported(&'static str),

    #[error("bracket expansion failed: best overlap {best_overlap:.4} at T = {best_time:.3}")]
    BracketFailure { best_overlap: f64, best_time: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
