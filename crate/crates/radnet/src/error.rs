//! Crate-wide error type.

/// Errors surfaced by scene construction, rate evaluation, estimation and
/// the optimization routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A scene or experiment configuration is inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A quantity left its mathematical domain (e.g. singular distortion).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical routine failed (factorization, SVD, Newton step).
    #[error("numerical failure: {0}")]
    Numeric(String),

    /// A search procedure found no admissible point.
    #[error("search failed: {0}")]
    Search(String),
}

pub type Result<T> = std::result::Result<T, Error>;
