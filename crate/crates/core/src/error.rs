use std::path::PathBuf;

/// Errors produced anywhere in the restoration pipeline.
#[derive(Debug, thiserror::Error)]
pub enum GpenError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degradation codec error: {0}")]
    DegradationCodec(String),

    #[error("incompatible checkpoint: {}", .0.join("; "))]
    IncompatibleCheckpoint(Vec<String>),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("image error for {path:?}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GpenError> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(GpenError::InvalidArgument(msg.into()))
}
