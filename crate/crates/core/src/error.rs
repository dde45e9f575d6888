use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the segmentation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range: {0}")]
    Range(String),
    #[error("degenerate volume: {0}")]
    DegenerateVolume(String),
    #[error("index {index} out of range for {len} slices")]
    Index { index: usize, len: usize },
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameters: {0}")]
    Param(String),
    #[error("could not place lesion inside liver after {attempts} attempts")]
    Placement { attempts: usize },
    #[error("loss mask has no support")]
    DegenerateMask,
    #[error("no slice contains the foreground class")]
    EmptyForeground,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("box out of bounds: {0}")]
    Bounds(String),
    #[error("detector training needs both classes, missing {0}")]
    ClassMissing(&'static str),
    #[error("volume of {voxels} voxels exceeds the dense CRF cap of {cap}")]
    Size { voxels: usize, cap: usize },
    #[error("no prediction for case {0}")]
    MissingPrediction(String),
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
