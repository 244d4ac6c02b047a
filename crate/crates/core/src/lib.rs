//! Saliency-modulated human detection.
//!
//! The pipeline multiplies each input image by a scaled saliency map, feeds
//! the result to a small fully-convolutional detector that predicts grid
//! coverage and box corners, clusters the decoded boxes, and scores the
//! detections with per-human accuracy and log-average miss rate.

pub mod cli;
pub mod config;
pub mod datasets;
pub mod eval;
pub mod gridcodec;
pub mod inference;
pub mod network;
pub mod raster;
pub mod saliency;
pub mod training;

pub use gridcodec::{BBox, Candidate, GridSpec, LabelGrid};
pub use network::{NetConfig, NetParams};
pub use raster::Image;
pub use saliency::{ModulationCfg, SaliencyMap};
