use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] metachex::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", .path.display())]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error("inputs do not match: {0}")]
    Mismatch(String),

    #[error("{}: {message}", .path.display())]
    Format { path: PathBuf, message: String },

    #[error("finished with errors: {0}")]
    Incomplete(String),

    #[error("plotting failed: {0}")]
    Plot(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => match e {
                metachex::Error::MissingColumn(_) | metachex::Error::Row { .. } | metachex::Error::Csv(_) => "data",
                metachex::Error::UnlabeledFiles(_) => "data",
                metachex::Error::Config(_) => "config",
                metachex::Error::Io { .. } => "io",
                metachex::Error::MissingWeights(_) => "missing_weights",
                metachex::Error::VariantMismatch { .. } => "variant_mismatch",
                metachex::Error::Integrity(_) => "integrity",
                _ => "compute",
            },
            CliError::Config(_) | CliError::Toml { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Mismatch(_) => "mismatch",
            CliError::Format { .. } | CliError::Json(_) => "format",
            CliError::Incomplete(_) => "incomplete",
            CliError::Plot(_) => "plot",
        }
    }
}

/// What a failed command prints on stderr, as one JSON line.
#[derive(Debug, Serialize)]
pub struct ErrorRecord<'a> {
    pub status: &'static str,
    pub command: &'a str,
    pub kind: &'static str,
    pub message: String,
}

impl<'a> ErrorRecord<'a> {
    pub fn new(command: &'a str, err: &CliError) -> Self {
        Self {
            status: "error",
            command,
            kind: err.kind(),
            message: err.to_string(),
        }
    }
}
