//! Holistic oriented-object detection for very large images.
//!
//! The crate covers the parts of such a detector that do not need a neural
//! network: rotated-box geometry, pyramid tiling, label assignment to
//! layers and windows, per-sample regression weights, loss assembly,
//! feature fusion across layers, merging of window detections and
//! evaluation, plus a seeded synthetic scene generator that drives the
//! whole chain end to end.

pub mod assignment;
pub mod config;
pub mod error;
pub mod eval;
pub mod formats;
pub mod fusion;
pub mod geometry;
pub mod losses;
pub mod merge;
pub mod pipeline;
pub mod pyramid;
pub mod ssrw;
pub mod synth;

pub use assignment::{assign_to_layers, assign_to_windows, LayerThresholds};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use eval::{evaluate, EvalConfig, EvalReport, GroundTruth, ImageData};
pub use geometry::{rotated_iou, rotated_nms, OrientedBox, Point};
pub use merge::{merge_detections, Detection, MergeMode};
pub use pipeline::{run_pipeline, PipelineRun};
pub use pyramid::{plan_pyramid, PyramidPlan, PyramidTiling, TileWindow};
