use std::path::{Path, PathBuf};

use dcepk_nn::NnError;
use thiserror::Error;

/// Command failures, each tied to a stable process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration, malformed input or dimension mismatch (exit 2).
    #[error("{0}")]
    Config(String),
    /// A file could not be read or written (exit 3).
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// More than half of the masked voxels failed to fit (exit 4).
    #[error("{failed} of {masked} masked voxels failed to fit")]
    FitFailure { failed: usize, masked: usize },
    /// Training diverged (exit 5).
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::FitFailure { .. } => 4,
            CliError::NonFiniteLoss { .. } => 5,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl From<dcepk_core::Error> for CliError {
    fn from(e: dcepk_core::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Converts a training or inference error; I/O failures are attributed to `path`.
pub fn from_nn(e: NnError, path: &Path) -> CliError {
    match e {
        NnError::NonFiniteLoss { step } => CliError::NonFiniteLoss { step },
        NnError::Io(source) => CliError::io(path, source),
        other => CliError::Config(other.to_string()),
    }
}
