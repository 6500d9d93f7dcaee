use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("state is not normalized (squared norm {norm_sqr})")]
    NotNormalized { norm_sqr: f64 },

    #[error("non-finite amplitude")]
    NonFinite,

    #[error("invalid spin direction (theta = {theta}, phi = {phi})")]
    InvalidDirection { theta: f64, phi: f64 },

    #[error("state is entangled: tangle {tangle} exceeds tolerance {tol}")]
    NotAProductState { tangle: f64, tol: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty batch")]
    EmptyBatch,
}
