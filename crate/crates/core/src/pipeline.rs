//! End-to-end run on a synthetic scene: tile the pyramid, hand each window
//! its labels, simulate per-window detections, merge and evaluate.

use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::assignment::{assign_to_layers, assign_to_windows, DroppedLabel};
use crate::config::PipelineConfig;
use crate::error::Result;
use crate::eval::{evaluate, EvalReport, GroundTruth, ImageData};
use crate::merge::{merge_detections, remap_to_original, Detection, Frame};
use crate::pyramid::{plan_pyramid, PyramidTiling};
use crate::synth::{generate_scene, perturb_detector, substream_seed};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSummary {
    pub layer: usize,
    pub height: u32,
    pub width: u32,
    pub windows: usize,
    pub labels: usize,
    pub window_labels: usize,
    pub detections: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub gts: Vec<GroundTruth>,
    pub tiling: PyramidTiling,
    pub layers: Vec<LayerSummary>,
    pub dropped: Vec<DroppedLabel>,
    /// Detections in the original frame before merging.
    pub raw: Vec<Detection>,
    pub merged: Vec<Detection>,
    pub report: EvalReport,
}

/// Runs the pipeline on the scene described by `cfg.scene`, seeded by
/// `cfg.seed` (the scene seed is derived from it).
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    let mut scene = cfg.scene.clone();
    scene.seed = substream_seed(cfg.seed, &[0]);
    let gts = generate_scene(&scene)?;
    run_on_scene(cfg, gts)
}

/// Same as [`run_pipeline`] with a fixed ground-truth set.
pub fn run_on_scene(cfg: &PipelineConfig, gts: Vec<GroundTruth>) -> Result<PipelineRun> {
    cfg.validate()?;
    let plan = plan_pyramid(
        cfg.scene.height,
        cfg.scene.width,
        cfg.sigma,
        cfg.window_height,
        cfg.window_width,
    )?;
    let n = plan.n();
    let tiling = PyramidTiling::new(plan, cfg.overlap)?;
    let boxes: Vec<_> = gts.iter().map(|g| g.bbox).collect();
    let assignment = assign_to_layers(&boxes, &tiling.plan, &cfg.thresholds);

    let mut jobs = Vec::new();
    let mut layers = Vec::with_capacity(n);
    for (m, group) in (1..=n).zip(&assignment.groups) {
        let windows = &tiling.layers[m - 1];
        let per_window = assign_to_windows(group, windows);
        let size = tiling.plan.layers[m - 1];
        layers.push(LayerSummary {
            layer: m,
            height: size.height,
            width: size.width,
            windows: windows.len(),
            labels: group.len(),
            window_labels: per_window.iter().map(Vec::len).sum(),
            detections: 0,
        });
        for (win, labels) in windows.iter().zip(per_window) {
            let local: Vec<GroundTruth> = labels
                .iter()
                .map(|l| GroundTruth {
                    bbox: l.bbox,
                    ..gts[l.source].clone()
                })
                .collect();
            jobs.push((*win, local));
        }
    }

    let per_job: Vec<Vec<Detection>> = jobs
        .par_iter()
        .map(|(win, local)| {
            let seed = substream_seed(cfg.seed, &[1, win.layer as u64, win.index as u64]);
            let bounds = (f64::from(win.width), f64::from(win.height));
            Ok(perturb_detector(local, &cfg.jitter, bounds, seed)?
                .into_iter()
                .map(|d| Detection {
                    layer: win.layer,
                    window: win.index,
                    frame: Frame::Window,
                    ..d
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut local = Vec::new();
    for ((win, _), dets) in jobs.iter().zip(per_job) {
        layers[win.layer - 1].detections += dets.len();
        local.extend(dets);
    }
    let raw = remap_to_original(&local, &tiling)?;
    let merged = merge_detections(
        &raw,
        &cfg.thresholds,
        n,
        cfg.nms_iou,
        cfg.scale_filter,
        cfg.merge_mode,
    );
    let report = evaluate(
        &[ImageData {
            gts: gts.clone(),
            dets: merged.clone(),
        }],
        &cfg.eval,
    );
    Ok(PipelineRun {
        gts,
        tiling,
        layers,
        dropped: assignment.dropped,
        raw,
        merged,
        report,
    })
}

impl fmt::Display for PipelineRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.tiling.plan;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "image {}x{}  sigma {}  layers {}",
            p.width,
            p.height,
            p.sigma,
            p.n()
        );
        let _ = writeln!(
            s,
            "ground truths {}  dropped {}",
            self.gts.len(),
            self.dropped.len()
        );
        let _ = writeln!(
            s,
            "layer  size         windows  labels  window_labels  detections"
        );
        for l in &self.layers {
            let _ = writeln!(
                s,
                "{:>5}  {:>5}x{:<5}  {:>7}  {:>6}  {:>13}  {:>10}",
                l.layer, l.width, l.height, l.windows, l.labels, l.window_labels, l.detections
            );
        }
        let _ = writeln!(
            s,
            "raw detections {}  merged {}",
            self.raw.len(),
            self.merged.len()
        );
        write!(f, "{s}{}", self.report)
    }
}
