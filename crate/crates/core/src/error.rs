use std::path::PathBuf;

use thiserror::Error;

use crate::representation::TapPoint;
use crate::store::FormatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("token index {index} out of range: decoder activation has {available} tokens")]
    TokenIndexOutOfRange { index: usize, available: usize },

    #[error("image '{image_id}' has no {tap} activation")]
    MissingTap { image_id: String, tap: TapPoint },

    #[error("prompt needs at least 2 class names, got {0}")]
    TooFewChoices(usize),

    #[error("length mismatch: {left} answers vs {right} labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("class {class_id} has {available} images, need at least {needed} for a {k}-shot split")]
    NotEnoughImages {
        class_id: u32,
        available: usize,
        needed: usize,
        k: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("every requested token index was skipped: {0:?}")]
    AllIndicesSkipped(Vec<usize>),

    #[error("prompt mismatch: manifest has {stored:?}, class names rebuild {rebuilt:?}")]
    PromptMismatch { stored: String, rebuilt: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("referenced files do not exist: {0:?}")]
    MissingFiles(Vec<PathBuf>),

    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
