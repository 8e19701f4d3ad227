use std::path::PathBuf;

use crate::VertexId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite component at position {0}")]
    NonFinite(usize),

    #[error("negative component at position {0} is not allowed under chi-square")]
    NegativeComponent(usize),

    #[error("cosine distance is undefined for a zero vector")]
    ZeroVector,

    #[error("vertex {0} is not live")]
    NotLive(VertexId),

    #[error("vertex {0} was already removed")]
    AlreadyRemoved(VertexId),

    #[error("self-loop on vertex {0}")]
    SelfLoop(VertexId),

    #[error("invalid edge distance {0}")]
    InvalidDistance(f32),

    #[error("graph has no live vertices")]
    EmptyGraph,

    #[error("graph is frozen for reading")]
    Frozen,

    #[error("k = {k} must be smaller than the number of points ({n})")]
    KTooLarge { k: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("ground truth depth {depth} is smaller than requested k = {k}")]
    TruthTooShallow { depth: usize, k: usize },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("inconsistent dimension at record {record}: expected {expected}, found {found}")]
    InconsistentDimension {
        record: usize,
        expected: usize,
        found: usize,
    },

    #[error("file size {size} is not a multiple of the record size {record}")]
    SizeMismatch { size: u64, record: u64 },

    #[error("bad magic bytes, not a graph file")]
    BadMagic,

    #[error("unsupported graph format version {0}")]
    UnsupportedVersion(u32),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("ground-truth cache entry {path} is corrupt: {reason}")]
    CacheCorrupt { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
