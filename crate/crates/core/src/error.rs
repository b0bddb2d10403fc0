use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Requested object does not fit the configured size limits.
    #[error("capacity exceeded: {what} (limit {limit})")]
    Capacity { what: String, limit: String },

    /// A measured outcome (f > 0) has zero or negative model probability.
    #[error("singular probability for POVM {povm}, outcome {outcome}: p = {p:e}")]
    SingularProbability { povm: usize, outcome: usize, p: f64 },

    /// A file or table violates its schema.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// The objective is not finite at the starting point.
    #[error("objective is not finite at the initial point (value {0})")]
    Initialization(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
