use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },
    #[error("feature rows ({features}) do not match point count ({points})")]
    FeatureLengthMismatch { points: usize, features: usize },
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("invalid radius {0}")]
    InvalidRadius(f64),
    #[error("k = {k} exceeds source size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("sample count {m} not in 1..={n}")]
    MTooLarge { m: usize, n: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty pooling group {0}")]
    EmptyGroup(usize),
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("feature widths differ: frame1 {0}, frame2 {1}")]
    FeatureWidthMismatch(usize, usize),
    #[error("three-point interpolation needs at least 3 source points, got {0}")]
    TooFewSourcePoints(usize),
    #[error("sample has no ground-truth flow")]
    NoGroundTruth,
    #[error("every point is masked out")]
    AllPointsMasked,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid camera intrinsics: {0}")]
    BadIntrinsics(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file truncated while reading {0}")]
    TruncatedFile(&'static str),
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no supervised points")]
    AllMasked,
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
