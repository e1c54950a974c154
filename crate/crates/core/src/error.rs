use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the clustering pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid bounding box: {0}")]
    InvalidBBox(String),
    #[error("homography is singular or non-finite")]
    SingularHomography,
    #[error("point projects to the line at infinity (|s| = {0:e})")]
    DegenerateProjection(f64),
    #[error("cannot normalize a zero-length vector")]
    ZeroVector,
    #[error("schema error: {0}")]
    Schema(String),
    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimMismatch {
        expected: usize,
        found: usize,
        context: String,
    },
    #[error("camera id {camera} is outside [0, {num_cameras})")]
    UnknownCamera { camera: usize, num_cameras: usize },
    #[error("scene has no detections")]
    EmptyScene,
    #[error("component {component} has {peaks} peaks")]
    MultiplePeaks { component: usize, peaks: usize },
    #[error("component {component} has no peak")]
    NoPeak { component: usize },
    #[error("node {0} has no identity label")]
    MissingLabel(usize),
    #[error("batch contains no edges")]
    EmptyEdgeSet,
    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),
    #[error("at least 2 samples required, got {0}")]
    TooFewSamples(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("ground-truth pool has no graph with edges")]
    EmptyPool,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn dim(expected: usize, found: usize, context: impl Into<String>) -> Self {
        Error::DimMismatch {
            expected,
            found,
            context: context.into(),
        }
    }
}
