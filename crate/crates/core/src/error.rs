//! Error types shared across the engine.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure reported by a feature provider or the bridge protocol.
#[derive(Debug, Error)]
pub enum ProviderError {
    /// Embedding violated the provider contract (wrong dimension, non-finite values).
    #[error("provider contract violation: {0}")]
    Contract(String),
    #[error("provider backend failure: {0}")]
    Backend(String),
    #[error("bridge protocol error: {0}")]
    Protocol(String),
    #[error("provider i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed data in {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no mask source for frame {0}: mask file absent and no bridge configured")]
    NoMaskSource(usize),
    #[error("segment has no valid depth pixels")]
    EmptySegment,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("stage {stage} failed on frame {frame}: {source}")]
    Stage {
        stage: &'static str,
        frame: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str, frame: usize) -> Self {
        match self {
            already @ Error::Stage { .. } => already,
            other => Error::Stage {
                stage,
                frame,
                source: Box::new(other),
            },
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Provider(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
