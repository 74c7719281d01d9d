//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by geometry, solvers, pipelines and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// The un-normalized normal direction collapsed below 1e-12; only
    /// possible for invalid inputs since depth is strictly positive.
    #[error("degenerate normal at pixel ({row}, {col}): direction length {length:.3e}")]
    DegenerateNormal { row: usize, col: usize, length: f64 },

    /// A masked-in depth (or theta third component) is zero or negative.
    #[error("non-positive depth at pixel ({row}, {col}): {value}")]
    NonPositiveDepth { row: usize, col: usize, value: f64 },

    /// An operation that needs at least one masked-in pixel got none.
    #[error("mask is empty: {context}")]
    EmptyMask { context: &'static str },

    /// Vector or grid sizes are inconsistent.
    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// The objective returned NaN/inf and backtracking could not recover.
    #[error("objective returned a non-finite value and 30 backtracking steps failed")]
    NonFiniteObjective,

    /// The stacked lighting system has rank below 4 (degenerate geometry,
    /// e.g. a perfectly flat masked region, or identically zero albedo).
    #[error("lighting system is rank deficient (rank {rank} < 4)")]
    RankDeficient { rank: usize },

    /// Multi-shot pipelines need at least four images.
    #[error("too few images: got {got}, need at least {min}")]
    TooFewImages { got: usize, min: usize },

    /// A PFM file failed header parsing.
    #[error("malformed PFM header: {reason}")]
    MalformedHeader { reason: String },

    /// A PFM file holds the wrong number of channels for the request.
    #[error("channel mismatch: expected {expected} channels, file has {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    /// PNG color type outside 8/16-bit RGB.
    #[error("unsupported color type: {detail}")]
    UnsupportedColorType { detail: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },

    /// Input data violates a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: &std::path::Path, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.display().to_string(),
            source,
        }
    }
}
