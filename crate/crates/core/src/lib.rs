//! Cost-sensitive two-stage lesion detection at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: reverse-mode differentiation over dense matrices
//! - [`syndata`]: synthetic multi-channel slices, dataset I/O, augmentation
//! - [`detector`]: anchor proposals, RoI heads, inference, checkpoints
//! - [`losses`]: the six-term multi-task loss with lesion- and slice-level costs
//! - [`trainer`]: per-slice SGD training
//! - [`evaluator`]: lesion/slice metrics, threshold sweeps, cost-vs-threshold comparison
//! - [`experiment`]: multi-seed experiment orchestration and report emitters

pub mod autodiff;
pub mod checkpoint;
pub mod detector;
pub mod error;
pub mod evaluator;
pub mod experiment;
pub mod geometry;
pub mod losses;
pub mod syndata;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{iou, BBox};
