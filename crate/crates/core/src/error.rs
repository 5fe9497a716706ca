use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("no threads could be parsed from the source ({skipped} records skipped)")]
    EmptyCorpus { skipped: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("statistic undefined: {0}")]
    UndefinedStatistic(String),

    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate (zero-norm) vector at row {row}")]
    DegenerateVector { row: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("gold action {action} at step {step} has probability zero (infinite loss)")]
    InfiniteLoss { step: usize, action: usize },

    #[error("non-finite gradient at step {step}: {diagnostics}")]
    NonFiniteGradient { step: u64, diagnostics: String },

    #[error("fixture schema error: {0}")]
    Schema(String),

    #[error("fixture has no {kind} entry for key {key}")]
    MissingKey { kind: &'static str, key: String },

    #[error("scoring transport error after {retries} retries: {message}")]
    Transport { retries: u32, message: String },

    #[error("scoring failed for sentence {sentence}: {source}")]
    Scorer {
        sentence: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
