use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed keypoint document: {0}")]
    MalformedDocument(String),

    #[error("expected 25 keypoint triples, found {found} values")]
    WrongJointCount { found: usize },

    #[error("joint {joint} has negative confidence {confidence}")]
    NegativeConfidence { joint: usize, confidence: f32 },

    #[error("source dimensions contain zero: {height}x{width}")]
    ZeroDims { height: usize, width: usize },

    #[error("poses share no visible joints")]
    NoSharedVisibleJoints,

    #[error("image is empty")]
    EmptyImage,

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("non-finite activation after {0}")]
    NonFiniteActivation(String),

    #[error("non-finite loss at epoch {epoch} step {step}: {components}")]
    NonFiniteLoss {
        epoch: u64,
        step: u64,
        components: String,
    },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("probability row {row} sums to {sum}, expected 1")]
    RowNotNormalized { row: usize, sum: f64 },

    #[error("classifier weights unavailable: {0}")]
    WeightsUnavailable(String),

    #[error("invalid value: {0}")]
    InvalidArgument(String),

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("manifest {path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn dims(message: impl Into<String>) -> Self {
        Error::DimMismatch(message.into())
    }
}
