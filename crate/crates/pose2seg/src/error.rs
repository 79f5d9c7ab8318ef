//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid keypoint: ({x}, {y}) with visibility {v} lies outside the declared space")]
    InvalidKeypoint { x: f64, y: f64, v: f64 },

    #[error("invalid visibility code {0} (expected 0, 1 or 2)")]
    InvalidVisibilityCode(u8),

    #[error("invalid bbox: zero or negative area ({w} x {h})")]
    InvalidBbox { w: f64, h: f64 },

    #[error("insufficient data: needed {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate configuration: source points are all coincident")]
    DegenerateConfiguration,

    #[error("singular transform: matrix is not invertible")]
    SingularTransform,

    #[error("template {index} has only {valid} valid joints (minimum 3)")]
    SparseTemplate { index: usize, valid: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("reference error: {referrer} references unknown {kind} id {id}")]
    Reference {
        referrer: String,
        kind: &'static str,
        id: u64,
    },

    #[error("corrupt mask: {0}")]
    CorruptMask(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: String, right: String },

    #[error("pose has no valid keypoints")]
    NoValidKeypoints,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable kind, used by the CLI error JSON and exit codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidKeypoint { .. } => "invalid_keypoint",
            Error::InvalidVisibilityCode(_) => "invalid_visibility_code",
            Error::InvalidBbox { .. } => "invalid_bbox",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::DegenerateConfiguration => "degenerate_configuration",
            Error::SingularTransform => "singular_transform",
            Error::SparseTemplate { .. } => "sparse_template",
            Error::Format(_) => "format",
            Error::Reference { .. } => "reference",
            Error::CorruptMask(_) => "corrupt_mask",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NoValidKeypoints => "no_valid_keypoints",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
