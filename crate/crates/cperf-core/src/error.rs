use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("invalid legend: {0}")]
    Legend(String),

    #[error("duplicate image id {0:?}")]
    DuplicateImageId(String),

    #[error("unreadable raster {path}: {message}")]
    Raster { path: PathBuf, message: String },

    #[error(
        "dimension mismatch for image {image_id:?}: gt is {gt_w}x{gt_h}, pred is {pred_w}x{pred_h}"
    )]
    DimensionMismatch {
        image_id: String,
        gt_w: usize,
        gt_h: usize,
        pred_w: usize,
        pred_h: usize,
    },

    #[error("invalid box in {image_id:?}: {message}")]
    InvalidBox { image_id: String, message: String },

    #[error("pairing mismatch: {0}")]
    PairingMismatch(String),

    #[error("label maps have different dimensions: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),

    #[error("signatures cover different cell counts: {0} vs {1}")]
    CellCountMismatch(usize, usize),

    #[error("invalid patch spec: {0}")]
    InvalidSpec(String),

    #[error("no eligible images: {0}")]
    NoEligibleImages(String),

    #[error(
        "no batches survived filtering: insufficient content overlap between the datasets \
         (try lowering the similarity threshold or raising patches-per-image)"
    )]
    NoBatches,

    #[error("too few batches for a bootstrap interval: have {0}, need at least 2")]
    TooFewBatches(usize),

    #[error("invalid run configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
