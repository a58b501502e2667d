use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("integration diverged at {at}")]
    Divergence { at: String },

    #[error("non-finite training loss at epoch {epoch}, step {step} (last finite loss {last_finite})")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        last_finite: f64,
    },

    #[error("dataset generation failed: {0}")]
    Generation(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(expected: usize, got: usize) -> Self {
        Error::Shape { expected, got }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }

    /// True for failures caused by the numbers rather than by inputs or IO.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::NonFiniteLoss { .. } | Error::Fit(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
