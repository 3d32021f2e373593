use std::io;
use std::path::{Path, PathBuf};

use inst4dgs_core::error::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: format version {found}, expected {expected}")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("missing prerequisite: {0}")]
    Missing(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} self-check families failed")]
    Check(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            message: message.into(),
        }
    }

    /// 2 config, 3 missing prerequisite, 4 format or version, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Core(CoreError::Config { .. }) => 2,
            Error::Missing(_) | Error::Core(CoreError::Missing(_)) => 3,
            Error::Format { .. } | Error::Version { .. } => 4,
            Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 3,
            _ => 1,
        }
    }
}
