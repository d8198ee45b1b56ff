use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("no paired samples found in {0}")]
    NoSamples(PathBuf),

    #[error("dataset path does not exist: {0}")]
    MissingPath(PathBuf),

    #[error("identity {identity}: {what}")]
    MissingPair { identity: String, what: String },

    #[error("split sizes {requested} exceed the {available} available pairs")]
    SplitTooLarge { requested: usize, available: usize },

    #[error("invalid landmarks for {identity}: {reason}")]
    InvalidLandmarks { identity: String, reason: String },

    #[error("malformed landmark line {line}: {content:?}")]
    LandmarkParse { line: usize, content: String },

    #[error("malformed layer spec token {token:?}: {reason}")]
    LayerSpec { token: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite loss term {term} = {value}")]
    NonFinite { term: String, value: f64 },

    #[error("missing loss term {0}")]
    MissingTerm(String),

    #[error("epoch {epoch} outside schedule range 1..={last}")]
    EpochOutOfRange { epoch: usize, last: usize },

    #[error("invalid config key {key:?}: {reason}")]
    ConfigKey { key: String, reason: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("corrupt checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("zero-norm vector in cosine distance")]
    ZeroVector,

    #[error("probe identity {0:?} not found exactly once in gallery")]
    GalleryIdentity(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}
