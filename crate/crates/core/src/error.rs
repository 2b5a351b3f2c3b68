use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NearbyError {
    /// Input outside the domain of an operation (shape mismatch, empty input, bad index).
    #[error("domain error: {0}")]
    Domain(String),
    /// A stated hypothesis of a construction does not hold for the input.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// A property the construction guarantees did not hold; indicates a bug or float breakdown.
    #[error("internal check failed: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, NearbyError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(NearbyError::Domain(msg.into()))
}

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(NearbyError::Precondition(msg.into()))
}
