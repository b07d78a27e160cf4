use thiserror::Error;

use crate::geometry::Category;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("selection is empty: no usable texels for instance")]
    EmptySelection,
    #[error("point lies on or behind the camera plane (z = {z})")]
    BehindCamera { z: f64 },
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("point counts differ: {source_len} source vs {target_len} target")]
    CountMismatch {
        source_len: usize,
        target_len: usize,
    },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("depth map required but not provided")]
    MissingDepth,
    #[error("no scale prior for category {0}")]
    MissingPrior(Category),
    #[error("no samples for category {0}")]
    MissingCategory(Category),
    #[error("ground truth contains no instances of the evaluated class")]
    NoGroundTruth,
    #[error("rejection sampling exhausted after {attempts} attempts")]
    ExhaustedAttempts { attempts: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("identifier mismatch: {0}")]
    IdMismatch(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
