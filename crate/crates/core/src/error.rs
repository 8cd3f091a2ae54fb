use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("interpolation time {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("point lies outside the box")]
    OutsideBox,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cardinality mismatch: {left} source points vs {right} target points")]
    CardinalityMismatch { left: usize, right: usize },

    #[error("assignment of size {size} exceeds the solver cap {cap}")]
    TooLarge { size: usize, cap: usize },

    #[error("target configuration too sparse: {targets} targets for {sources} sources")]
    TooSparse { sources: usize, targets: usize },

    #[error("model has no analytic density with respect to the Poisson process: {0}")]
    NoAnalyticDensity(String),

    #[error("coupling {coupling} is not available for these models: {reason}")]
    IncompatibleCoupling { coupling: String, reason: String },

    #[error("density is not differentiable: {0}")]
    NotDifferentiable(String),

    #[error("density grid is not normalized (mass {0})")]
    NotNormalized(f64),

    #[error("zero probability input")]
    ZeroProbability,

    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
