use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no sentences")]
    Empty,

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("non-finite input to transform: {0}")]
    NonFinite(f64),

    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),

    #[error("step too large: 1 - C*lambda = {0} <= 0")]
    StepTooLarge(f64),

    #[error("training diverged: non-finite value at step {0}")]
    Diverged(u64),

    #[error("calibration failed: every candidate diverged")]
    CalibrationFailed,

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
