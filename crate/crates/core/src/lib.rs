//! False negative reduction for video instance segmentation.
//!
//! Detectors miss objects; in image sequences those misses show up as gaps
//! and sudden ends in the time series of tracked instances. This crate
//! reconstructs the missing instances by extrapolating track motion and
//! shifting the last observed mask to the predicted position, then prunes
//! the resulting false positives with a meta classifier trained on
//! instance-wise uncertainty metrics (geometry, depth, temporal consistency,
//! survival analysis). An evaluation harness compares the fused
//! detect-then-prune method against plain score thresholding.
//!
//! The pipeline stages, in order:
//!
//! 1. [`mask`] — run-length encoded mask algebra (IoU, centers, shifts).
//! 2. [`sequence`] — sequence file formats, a synthetic scene generator and
//!    a KITTI-MOTS-style annotation adapter.
//! 3. [`track`] — overlap-based tracking of predicted instances.
//! 4. [`detect`] — reconstruction of missed instances from track
//!    inconsistencies, with covering checks against ignored regions and
//!    existing predictions.
//! 5. [`metrics`] — per-instance uncertainty and geometry metrics.
//! 6. [`survival`] — Cox regression over track lifetimes (the survival
//!    metric `v`).
//! 7. [`meta`] — gradient-boosted meta classification of true vs false
//!    positive instances from metric time series.
//! 8. [`eval`] — ground-truth matching, AUROC/accuracy, precision-recall
//!    sweeps, tracking metrics and occlusion stratification.
//! 9. [`pipeline`] — orchestration of the stages behind the `fnr` binary.
//!
//! Each stage is usable on its own; see the `examples/` directory for one
//! runnable program per capability.

pub mod detect;
pub mod eval;
pub mod mask;
pub mod meta;
pub mod metrics;
pub mod pipeline;
pub mod sequence;
pub mod survival;
pub mod track;

pub use mask::{BoundingBox, CenterPoint, MaskError, PixelCoord, PixelMask};
