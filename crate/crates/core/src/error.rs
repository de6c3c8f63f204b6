//! Error type shared by every module in the crate.

/// Errors produced by tuner components, objectives, and experiment drivers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An input violated a documented domain precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A gradient with zero norm was observed. Estimators are undefined at
    /// zero curvature, so the caller is expected to skip the tuner update
    /// for this step and reuse the previous hyperparameters.
    #[error("zero-norm gradient rejected by measurement estimators")]
    ZeroGradient,

    /// A gradient contained NaN or infinite components; the run aborts.
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },

    /// A vector had the wrong dimension for the state it was fed into.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
