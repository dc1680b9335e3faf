use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    /// An input artifact produced by an earlier command is missing.
    #[error("{path} not found; run `qpburst {needs}` first")]
    Dependency { path: PathBuf, needs: &'static str },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Core(#[from] qpburst::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Machine-readable failure report printed on stderr.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Dependency { .. } => "dependency",
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::Core(qpburst::Error::Config(_)) => "config",
            CliError::Core(_) => "analysis",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 2,
            "dependency" => 3,
            "io" | "format" => 4,
            _ => 5,
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
