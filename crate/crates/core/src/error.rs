use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum AsapError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("environment error: {0}")]
    Env(String),

    #[error("training diverged after {episodes} episodes: {reason}")]
    Divergence {
        episodes: usize,
        reason: String,
        /// Last parameter vector in which every entry was finite.
        last_finite: Box<crate::params::Parameters>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = AsapError> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(AsapError::Dimension(msg.into()))
}

pub(crate) fn domain_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(AsapError::Domain(msg.into()))
}
