use thiserror::Error;

/// Errors produced by the library. Messages are surfaced verbatim by the CLI.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite: factorization failed at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },

    #[error(
        "prior covariance is singular (factorization failed at pivot {pivot}); \
         pass an explicit diagonal jitter such as 1e-8"
    )]
    SingularPrior { pivot: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(
        "no critical value on the grid controls size at {alpha}; \
         minimal achieved size {min_size} at z = {at_z}"
    )]
    SearchFailed { alpha: f64, min_size: f64, at_z: f64 },

    #[error(
        "no threshold: cost-benefit ratio {ratio} is not below the rejection probability \
         {max_prob} at z = 0, so research is never profitable"
    )]
    NoThreshold { ratio: f64, max_prob: f64 },

    #[error("inconsistent study summary: {0}")]
    InconsistentSummary(String),

    #[error("insufficient data: need at least {needed} studies, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("input error: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
