use std::path::PathBuf;

use erda_lab::LabError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    CheckFailed(String),

    #[error(transparent)]
    Lab(#[from] LabError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
            CliError::Io { .. } => EXIT_IO,
            CliError::Lab(LabError::TrainingDiverged { .. } | LabError::CellDiverged { .. }) => EXIT_DIVERGED,
            CliError::Config { .. } | CliError::UnknownKey { .. } | CliError::Usage(_) | CliError::Lab(_) => {
                EXIT_USAGE
            }
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
