//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?} ({context})")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
        context: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("corpus generation failed: {0}")]
    Generation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown label {label:?}; allowed labels: {allowed:?}")]
    UnknownLabel { label: String, allowed: Vec<String> },

    #[error("non-finite loss at step {step}: l_base={l_base} l_dip={l_dip} l_pm={l_pm} l_pred={l_pred}")]
    NonFiniteLoss {
        step: usize,
        l_base: f64,
        l_dip: f64,
        l_pm: f64,
        l_pred: f64,
    },

    #[error("checkpoint incompatible with corpus: {0}")]
    Incompatible(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
