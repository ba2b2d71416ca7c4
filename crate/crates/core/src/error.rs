use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("metadata is missing required column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("files without a recognised label suffix: {}", .0.join(", "))]
    UnlabeledFiles(Vec<String>),

    #[error("split needs at least {needed} distinct patients, found {found}")]
    TooFewPatients { needed: usize, found: usize },

    #[error("class {class} needs {requested} samples but only {available} are available (short by {})", .requested - .available)]
    InsufficientClass {
        class: u8,
        requested: usize,
        available: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("AUC undefined: {0}")]
    AucUndefined(String),

    #[error("labels contain a single class: {0}")]
    SingleClass(String),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("weight file not found: {}", .0.display())]
    MissingWeights(PathBuf),

    #[error("model variant mismatch: expected {expected}, found {found}")]
    VariantMismatch { expected: String, found: String },

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
