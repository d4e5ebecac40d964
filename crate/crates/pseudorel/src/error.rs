use std::path::PathBuf;

/// Errors surfaced by the command-line layer, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or an inconsistent configuration.
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Core(#[from] pseudorel_core::Error),
    #[error("remote service: {0}")]
    Remote(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn file(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Self::File {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn line(path: impl Into<PathBuf>, line: usize, message: impl ToString) -> Self {
        Self::Line {
            path: path.into(),
            line,
            message: message.to_string(),
        }
    }

    /// 1 usage, 2 data, 3 remote service.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(pseudorel_core::Error::Remote { .. } | pseudorel_core::Error::Protocol(_))
            | CliError::Remote(_) => 3,
            CliError::Core(pseudorel_core::Error::InvalidArgument(_)) => 1,
            _ => 2,
        }
    }
}
