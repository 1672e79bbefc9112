pub mod error;
pub mod geometry;
pub mod raster;
pub mod rules;
pub mod evaluate;
pub mod segmenter;
pub mod parallel;
pub mod datasetgen;
pub mod pipeline;

pub use error::{DfmError, Result};
