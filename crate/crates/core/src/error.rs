use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("matrix is not skew-symmetric: |A[{i},{j}] + A[{j},{i}]| = {deviation:e}")]
    NotSkew { i: usize, j: usize, deviation: f64 },

    #[error("singular pivot at step {step}: |p| = {value:e}")]
    SingularPivot { step: usize, value: f64 },

    #[error("no L-kernel exists: J - K is singular")]
    NoLKernel,

    #[error("conditioning impossible: pivot block is singular (event has probability 0 or 1)")]
    ConditioningImpossible,

    #[error("invalid kernel: conditional probability {p} at step {step} outside [0, 1]")]
    InvalidKernel { step: usize, p: f64 },

    #[error("Krylov breakdown at step {step}: |h| = {value:e}")]
    Breakdown { step: usize, value: f64 },

    #[error("rank error: {0}")]
    Rank(String),

    #[error("argument {x} outside supported range [{lo}, {hi}]")]
    Range { x: f64, lo: f64, hi: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("sampler state error: {0}")]
    State(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
