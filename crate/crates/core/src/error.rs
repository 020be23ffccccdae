use thiserror::Error;

/// Error type shared across the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    /// Subject-level dataset splitting failed.
    #[error("split error: {0}")]
    Split(String),

    /// On-disk epoch file is malformed; `offset` is the byte position of the problem.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    /// Fitting a model or threshold set failed (usually empty/degenerate input).
    #[error("fit error: {0}")]
    Fit(String),

    /// Operation called on an object in the wrong state (e.g. unfitted bank).
    #[error("state error: {0}")]
    State(String),

    /// Rule selection failed.
    #[error("selection error: {0}")]
    Select(String),

    /// A numeric computation produced a non-finite value.
    #[error("numerics error: {0}")]
    Numerics(String),

    /// Matrix/vector dimensions do not conform.
    #[error("shape error: {0}")]
    Shape(String),

    /// Tree rendering referenced a rule outside the bank.
    #[error("render error: {0}")]
    Render(String),

    /// Metric evaluation failed (e.g. empty confusion matrix).
    #[error("eval error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
