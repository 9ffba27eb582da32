use thiserror::Error;

/// Errors raised across the simulation, optimization and learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("unit-modulus constraint violated at index {index} (|x| = {modulus})")]
    UnitModulus { index: usize, modulus: f64 },
    #[error("user {user} has a degenerate effective channel (norm {norm:e})")]
    DegenerateUser { user: usize, norm: f64 },
    #[error("fixed-point iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    IterationLimit { iterations: usize, residual: f64 },
    #[error("non-finite loss encountered: {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("unknown mode `{0}`")]
    UnknownMode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
