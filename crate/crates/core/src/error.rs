use thiserror::Error;

/// Errors surfaced by the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid field descriptor `{descriptor}`: {reason}")]
    Descriptor { descriptor: String, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("diffusion matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("h must be positive, found h = {value} at {point:?}")]
    NonPositiveH { value: f64, point: Vec<f64> },

    #[error("alpha must be positive, found alpha = {value} at {point:?}")]
    NonPositiveAlpha { value: f64, point: Vec<f64> },

    #[error("beta exceeds declared upper bound {bound}: beta = {value} at {point:?}")]
    BetaAboveBound { bound: f64, value: f64, point: Vec<f64> },

    #[error("no closed form available: {0}")]
    NoClosedForm(String),

    #[error("unknown example `{0}`")]
    UnknownExample(String),

    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error(
        "no offspring law on {{0, 1, K}} with mean {mean} and variance {variance} for K <= {cap}; raise the level n"
    )]
    OffspringLaw { mean: f64, variance: f64, cap: u64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("all {paths} paths were killed before time {t}")]
    AllPathsKilled { paths: usize, t: f64 },

    #[error("PDE solver unstable at step {step} (t = {t}): {reason}")]
    Unstable { step: usize, t: f64, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
