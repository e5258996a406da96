//! Error types shared across the crate.
//!
//! Every error carries a short machine-parseable `category()` string that the
//! CLI prints on failure.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {context}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite {
        context: &'static str,
        step: Option<usize>,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("generator tag mismatch: checkpoint is {checkpoint}, dataset is {dataset}")]
    TagMismatch { checkpoint: String, dataset: String },

    #[error("malformed {format} file: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("missing scores for selector {selector} on task {task_id}")]
    MissingScores { selector: String, task_id: u32 },

    #[error("judge response unparseable: {reason}; raw text: {raw}")]
    JudgeParse { reason: String, raw: String },

    #[error("judge request failed after {attempts} attempts: {reason}")]
    JudgeTransport { attempts: u32, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable one-word category for machine-parseable CLI errors.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::NonFinite { .. } => "non-finite",
            Error::InvalidParam { .. } => "invalid-param",
            Error::TagMismatch { .. } => "tag-mismatch",
            Error::Format { .. } => "bad-format",
            Error::MissingScores { .. } => "missing-scores",
            Error::JudgeParse { .. } => "judge-parse",
            Error::JudgeTransport { .. } => "judge-transport",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
