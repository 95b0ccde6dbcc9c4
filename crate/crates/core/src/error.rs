use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A normalizing denominator vanished (constant field on a sphere, zero polynomial, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A ball or ellipsoid left the domain of the field it integrates.
    #[error("domain violation: {0}")]
    Domain(String),

    /// An operator or configuration failed a structural bound.
    #[error("validation failed: {bound} at {point:?} (value {value}, limit {limit})")]
    Validation {
        bound: String,
        point: Vec<f64>,
        value: f64,
        limit: f64,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("did not converge: {0}")]
    Convergence(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
