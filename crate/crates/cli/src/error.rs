use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },

    #[error(transparent)]
    Core(#[from] hetloss_core::Error),

    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// 1 for usage and configuration problems, 2 for everything that went
    /// wrong while running.
    pub fn exit_code(&self) -> i32 {
        use hetloss_core::Error as E;
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 1,
            CliError::Core(
                E::InvalidConfig { .. } | E::TooFewSubjects { .. } | E::FoldOutOfRange { .. } | E::BatchTooLarge { .. },
            ) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
