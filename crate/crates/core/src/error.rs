use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("evidence is zero for observed state {0}")]
    ZeroEvidence(usize),

    #[error("enumeration of {0} entries exceeds the oracle cap of {cap}", cap = crate::oracle::MAX_ENUMERATION)]
    TooLarge(usize),

    #[error("unsupported size: {0}")]
    Unsupported(String),

    #[error("optimization diverged after {step} steps (last finite mean {mean}, var {var})")]
    Diverged { step: usize, mean: f64, var: f64 },

    #[error("non-finite value in {term} (epoch {epoch}, batch {batch})")]
    NonFinite {
        term: String,
        epoch: usize,
        batch: usize,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(expected: usize, got: usize) -> Self {
        Error::DimensionMismatch { expected, got }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
