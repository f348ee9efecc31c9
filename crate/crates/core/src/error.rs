use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bench::BenchError;
use crate::nn::NnError;
use crate::sim::SimError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Sim(#[from] SimError),

    #[error(transparent)]
    Bench(#[from] BenchError),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: malformed file: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("invalid configuration field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("missing prerequisite: {0}")]
    Prerequisite(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.as_ref().to_path_buf();
        move |source| Error::Io { path, source }
    }

    pub fn json(path: impl AsRef<Path>) -> impl FnOnce(serde_json::Error) -> Error {
        let path = path.as_ref().to_path_buf();
        move |source| Error::Json { path, source }
    }

    pub fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }

    /// Process exit code for the CLI: 2 usage, 3 stage prerequisite,
    /// 4 numeric failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Invalid(_) => 2,
            Error::Prerequisite(_) => 3,
            Error::Diverged(_) | Error::Nn(NnError::NonFinite { .. }) => 4,
            Error::Sim(SimError::NonFinite { .. }) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
