use std::path::PathBuf;

use thiserror::Error;

/// Every failure the engine can report.
#[derive(Debug, Error)]
pub enum DfmError {
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("walls overlap: {0}")]
    Overlap(String),
    #[error("wall {index} is not a thick wall")]
    NotThick { index: usize },
    #[error("design does not fit inside the frame: {0}")]
    FrameOverflow(String),
    #[error("more than 9 walls of kind {0}")]
    TooManyWalls(String),
    #[error("magnified crop ({width:.1} x {height:.1} px) exceeds the 256 px feature frame")]
    CropTooLarge { width: f64, height: f64 },
    #[error("placement failed after {attempts} attempts")]
    PlacementFailure { attempts: usize },
    #[error("image is empty")]
    EmptyImage,
    #[error("no bottom wall found")]
    NoBottomWall,
    #[error("no wall found above the bottom band")]
    NoWallFound,
    #[error("expected one wall, found {0}")]
    MultipleWalls(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("feature {index}: {source}")]
    Feature {
        index: usize,
        #[source]
        source: Box<DfmError>,
    },
    #[error("backend failed: {0}")]
    Backend(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl DfmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DfmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_feature(self, index: usize) -> Self {
        DfmError::Feature {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, DfmError>;
