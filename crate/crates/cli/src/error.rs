use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] outtree::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 2 for configuration problems, 3 for bad data, 4 for numerical faults.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Model(e) if e.is_numerical() => 4,
            CliError::Model(outtree::Error::EnumerationTooLarge { .. }) => 2,
            CliError::Model(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            4 => "numerical",
            _ => "data",
        }
    }

    /// Machine-readable record for the error stream.
    pub fn record(&self) -> serde_json::Value {
        serde_json::json!({
            "error": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
    }
}
