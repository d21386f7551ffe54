use std::io;

use thiserror::Error;

use crate::allocator::PartialProvision;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // embedding files and matrices
    #[error("bad magic bytes: expected \"BIPE\"")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),
    #[error("truncated data: expected {expected} bytes, found {found}")]
    TruncatedData { expected: u64, found: u64 },
    #[error("{extra} trailing bytes after payload")]
    TrailingData { extra: u64 },
    #[error("row {row} has norm {norm} (not unit within tolerance)")]
    NonUnitRow { row: usize, norm: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("data length {len} is not a multiple of dim {dim}")]
    ShapeMismatch { len: usize, dim: usize },
    #[error("payload checksum does not match manifest")]
    ChecksumMismatch,
    #[error("label count {labels} does not match centroid count {count}")]
    LabelCountMismatch { labels: usize, count: usize },
    #[error("centroid sum has near-zero norm {norm:e}")]
    ZeroNormCentroid { norm: f64 },
    #[error("matrix has no rows")]
    EmptyMatrix,

    // numerical domains
    #[error("domain error: {0}")]
    Domain(String),

    // pca
    #[error("need at least 2 rows for PCA, got {count}")]
    InsufficientData { count: usize },
    #[error("total variance is zero")]
    ZeroVariance,

    // allocation
    #[error("gallery has {count} rows, need more than k = {k}")]
    GalleryTooSmall { count: usize, k: usize },
    #[error("weighted neighborhood of reference {index} sums to near zero")]
    DegenerateNeighborhood { index: usize },
    #[error("perturbed direction has near-zero norm")]
    ZeroNormDirection,
    #[error("candidate r + alpha z has near-zero norm")]
    ZeroNormCandidate,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("attempt budget exhausted after accepting {} of the target", .0.set.len())]
    MaxAttemptsExceeded(Box<PartialProvision>),

    // statistics
    #[error("no collisions observed; the MLE is undefined (use the zero-collision bound)")]
    ZeroCollisions,
    #[error("occupied count {occupied} reaches capacity {capacity:e}")]
    CapacityExceeded { occupied: f64, capacity: f64 },

    // metrics and protocols
    #[error("score list is empty")]
    EmptyScores,
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("folded evaluation requested but pair list has no folds")]
    MissingFolds,
    #[error("pair list: {0}")]
    PairList(String),

    // synthetic harness
    #[error("bisection could not bracket the root")]
    BracketFailure,
    #[error("could not place a far row after {tries} tries")]
    GeometricInfeasible { tries: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
