//! Error type shared across the crate.

/// Errors produced by model evaluation, Gaussian algebra and the filter.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition (dimension mismatch,
    /// out-of-range parameter, inadmissible response, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A matrix required to be positive definite could not be repaired.
    #[error("numerical singularity: {0}")]
    Singular(String),

    /// All probability mass vanished (importance weights or mixture
    /// responsibilities collapsed to zero).
    #[error("degenerate distribution: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
