use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("tape already consumed by a previous backward pass")]
    TapeMissing,
    #[error("variables belong to different tapes")]
    ForeignVariable,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset too small: {0}")]
    DatasetTooSmall(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("series has {found} frames, checkpoint expects {expected}")]
    FrameCountMismatch { expected: usize, found: usize },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] dcepk_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(NnError::ShapeMismatch { op, detail: detail.into() })
}
