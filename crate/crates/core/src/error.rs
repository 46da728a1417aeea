//! Crate-wide error type.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on a domain value was violated.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// State or action index outside the bandit's tables.
    #[error("index out of range: {what} = {got}, limit {limit}")]
    IndexOutOfRange {
        what: &'static str,
        got: usize,
        limit: usize,
    },

    /// An operation that requires records was given an empty dataset.
    #[error("empty dataset")]
    EmptyDataset,

    /// A log-ratio was requested against a zero probability.
    #[error("zero probability for action {action} at state {state} in {role}")]
    ZeroProbability {
        role: &'static str,
        state: usize,
        action: usize,
    },

    /// The inner optimizer produced a non-finite loss.
    #[error("optimization diverged at iteration {iteration}, step {step}: loss = {loss}")]
    Diverged {
        iteration: usize,
        step: usize,
        loss: f64,
    },

    /// A serialized dataset line could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Stored hashes do not match the objects the dataset claims to describe.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
