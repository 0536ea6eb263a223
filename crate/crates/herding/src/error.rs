use thiserror::Error;

/// Errors produced by mixture construction, kernel expectations, optimization
/// and the samplers built on top of them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("mixture weights sum to {sum:.17}, outside the normalization gate")]
    WeightNormalization { sum: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("non-finite {what} encountered at {point:?}")]
    NonFinite { what: &'static str, point: Vec<f64> },

    #[error("all {starts} optimizer starts failed")]
    AllStartsFailed { starts: usize },

    #[error("sampling step {step} failed: {source}")]
    SamplerStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sweep {sweep}, coordinate {coordinate} failed: {source}")]
    SweepStep {
        sweep: usize,
        coordinate: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
