//! pose2seg: the non-neural core of a pose-based human instance segmentation
//! pipeline.
//!
//! The crate covers:
//! - a canonical 17-joint pose model with visibility encoding and flip
//!   semantics ([`pose`]);
//! - pose normalization and k-means template clustering ([`clustering`]);
//! - similarity-transform alignment of poses to templates, with flip
//!   detection and bilinear forward/inverse warps ([`affine`]);
//! - 55-channel skeleton feature rasterization ([`skeleton`]);
//! - COCO annotation ingestion, RLE mask codecs, and occlusion statistics
//!   ([`dataset`]);
//! - occlusion- and size-stratified mask average precision ([`eval`]);
//! - a geometric baseline segmenter and receptive-field analysis
//!   ([`baseline`]);
//! - the `pose2seg` CLI wiring it all together ([`cli`]).

pub mod affine;
pub mod baseline;
pub mod cli;
pub mod clustering;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geom;
pub mod pose;
pub mod raster;
pub mod skeleton;

pub use error::{Error, Result};
