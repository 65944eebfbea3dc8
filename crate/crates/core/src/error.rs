use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("degenerate mask: row {row} has no unmasked entry")]
    DegenerateMask { row: usize },

    #[error("degenerate attention: row {row} has zero norm over unmasked frames")]
    DegenerateAttention { row: usize },

    #[error("latent index error: {0}")]
    Index(String),

    #[error("k' = {k_prime} exceeds the latent count n = {n}")]
    KPrime { k_prime: usize, n: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("sequence too short: {len} frames for kernel width {kernel}")]
    SequenceTooShort { len: usize, kernel: usize },

    #[error("invalid config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: u64, loss: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(detail: impl Into<String>) -> Self {
        Error::Contract(detail.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 1,
            Error::Config { .. } => 3,
            Error::Incompatible(_) => 4,
            Error::KPrime { .. } => 5,
            Error::Format(_) => 6,
            Error::GradientCheck(_) => 7,
            Error::Divergence { .. } => 8,
            _ => 9,
        }
    }
}
