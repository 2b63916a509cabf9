use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read or write {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("dims/data mismatch: header implies {expected} values, found {found}")]
    DimsMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimMismatch([usize; 2], [usize; 2]),

    #[error("image too small for gradients: {0:?} (need at least 3x3)")]
    ImageTooSmall([usize; 2]),

    #[error("fixed image has no gradient content (insufficient landmarks)")]
    InsufficientLandmarks,

    #[error("starting point out of bounds in dimension {dim}: {value} not in [{lo}, {hi}]")]
    OutOfBounds { dim: usize, value: f64, lo: f64, hi: f64 },

    #[error("objective is not finite at the starting point")]
    NonFiniteObjective,

    #[error("need at least {needed} correspondences, got {got}")]
    TooFewCorrespondences { needed: usize, got: usize },

    #[error("degenerate point configuration: {0}")]
    Degenerate(String),

    #[error("point {index} lies behind the X-ray source")]
    BehindSource { index: usize },

    #[error("angles ({rotation_deg}, {angulation_deg}) outside calibrated range")]
    OutOfCalibratedRange { rotation_deg: f64, angulation_deg: f64 },

    #[error("shapes exceed the voxel grid: {0:?}")]
    ShapesExceedGrid(Vec<String>),

    #[error("field of view {fov_cm} cm exceeds volume extent {extent_cm} cm")]
    FovTooLarge { fov_cm: f64, extent_cm: f64 },

    #[error("registration result carries no ground-truth error")]
    MissingGroundTruth,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Unreadable {
            path: path.into(),
            source,
        }
    }
}
