use std::fmt;
use std::path::Path;

/// CLI failure classes mapped onto exit codes: domain errors exit 1,
/// I/O and parse errors exit 2.
#[derive(Debug)]
pub enum CliError {
    Domain(ddq_core::Error),
    Io {
        path: String,
        source: std::io::Error,
    },
    Parse {
        path: String,
        message: String,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Io { .. } | CliError::Parse { .. } => 2,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn parse(path: &Path, message: impl fmt::Display) -> Self {
        CliError::Parse {
            path: path.display().to_string(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Domain(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{path}: {source}"),
            CliError::Parse { path, message } => write!(f, "{path}: {message}"),
        }
    }
}

impl From<ddq_core::Error> for CliError {
    fn from(e: ddq_core::Error) -> Self {
        CliError::Domain(e)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
