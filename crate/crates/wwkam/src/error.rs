use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration or tangential set.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The tangential set admits a forbidden resonance.
    #[error("non-generic tangential sites: {certificate}")]
    NonGeneric { certificate: String },

    /// A matrix that must be inverted is singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Integration or eigen-solve failure.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
