//! Error types shared across the crate.

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke a documented precondition (tag/dimension mismatch,
    /// malformed set, missing reference data, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values or a numerically invalid state were encountered.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A model or fixture failed its construction-time validation.
    #[error("construction error: {0}")]
    Construction(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn construction(msg: impl Into<String>) -> Self {
        Error::Construction(msg.into())
    }
}
