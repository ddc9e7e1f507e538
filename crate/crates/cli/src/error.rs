use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Archive(String),

    #[error(transparent)]
    Model(#[from] ivdfm::error::Error),
}

impl CliError {
    /// Short stable tag used in the machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Data(_) => "data",
            CliError::Archive(_) => "archive",
            CliError::Model(_) => "model",
        }
    }

    /// One line of JSON: `{"error":{"kind":..,"message":..}}`.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
