use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("degenerate normal at pixel {pixel}")]
    DegenerateNormal { pixel: usize },

    #[error("correlation undefined: {0} has zero variance")]
    UndefinedCorrelation(&'static str),

    #[error("image too small: {width}x{height} needs more than {min} pixels per side")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("render set is empty")]
    EmptyRenderSet,

    #[error("need at least {needed} samples, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },

    #[error("predictor does not support stochastic sampling")]
    NotStochastic,

    #[error("weights shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("weights format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt weights payload: {0}")]
    CorruptPayload(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty pool")]
    EmptyPool,

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("crop of {crop} pixels exceeds source of {width}x{height}")]
    CropTooLarge { crop: usize, width: usize, height: usize },

    #[error("unsupported material family: {0}")]
    UnsupportedFamily(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { context: context.into(), message: message.into() }
    }
}
