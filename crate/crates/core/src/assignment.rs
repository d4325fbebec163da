//! Allocation of ground-truth boxes to pyramid layers and windows.
//!
//! A label joins layer `m` when its longer side (original pixels) lies in
//! `[min_m, max_m)`. Within a layer it is attached to every window whose
//! closed rectangle contains the label center.

use serde::{Deserialize, Serialize};

use crate::geometry::{OrientedBox, Point};
use crate::pyramid::{project_box, PyramidPlan, TileWindow};

/// Per-layer length bands `[min_m, max_m)` in original-image pixels with
/// `min_m = min_base * growth^(m-1)` and a common upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerThresholds {
    pub min_base: f64,
    pub growth: f64,
    pub max: f64,
}

impl Default for LayerThresholds {
    fn default() -> Self {
        Self {
            min_base: 15.0,
            growth: 2.0,
            max: 1448.0,
        }
    }
}

impl LayerThresholds {
    pub fn min(&self, layer: usize) -> f64 {
        self.min_base * self.growth.powi(layer as i32 - 1)
    }

    pub fn max(&self, _layer: usize) -> f64 {
        self.max
    }

    pub fn band(&self, layer: usize) -> (f64, f64) {
        (self.min(layer), self.max(layer))
    }

    pub fn in_band(&self, layer: usize, length: f64) -> bool {
        let (lo, hi) = self.band(layer);
        length >= lo && length < hi
    }

    /// Non-overlapping variant: layer `m` owns `[min_m, min_{m+1})`, the top
    /// layer owns `[min_n, max)`.
    pub fn in_exclusive_band(&self, layer: usize, n_layers: usize, length: f64) -> bool {
        let lo = self.min(layer);
        let hi = if layer >= n_layers {
            self.max
        } else {
            self.min(layer + 1).min(self.max)
        };
        length >= lo && length < hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerLabel {
    /// Index into the input label list.
    pub source: usize,
    /// Box in the layer frame.
    pub bbox: OrientedBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    TooShort,
    TooLong,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DroppedLabel {
    pub source: usize,
    pub length: f64,
    pub reason: DropReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAssignment {
    /// `groups[m - 1]` holds the labels of layer `m`.
    pub groups: Vec<Vec<LayerLabel>>,
    pub dropped: Vec<DroppedLabel>,
}

pub fn assign_to_layers(
    labels: &[OrientedBox],
    plan: &PyramidPlan,
    th: &LayerThresholds,
) -> LayerAssignment {
    let mut groups = vec![Vec::new(); plan.n()];
    let mut dropped = Vec::new();
    for (source, label) in labels.iter().enumerate() {
        let length = label.length();
        let mut placed = false;
        for (m, group) in (1..=plan.n()).zip(groups.iter_mut()) {
            if th.in_band(m, length) {
                group.push(LayerLabel {
                    source,
                    bbox: project_box(label, plan, m),
                });
                placed = true;
            }
        }
        if !placed {
            let reason = if length >= th.max {
                DropReason::TooLong
            } else {
                DropReason::TooShort
            };
            dropped.push(DroppedLabel {
                source,
                length,
                reason,
            });
        }
    }
    LayerAssignment { groups, dropped }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowLabel {
    pub source: usize,
    /// Box in the window frame.
    pub bbox: OrientedBox,
}

/// Attaches layer-frame labels to windows by the center-inside rule.
///
/// Centers beyond the (rounded) layer extent are clamped onto it for the
/// membership test so that every label lands somewhere.
pub fn assign_to_windows(labels: &[LayerLabel], windows: &[TileWindow]) -> Vec<Vec<WindowLabel>> {
    let mut out = vec![Vec::new(); windows.len()];
    let (mut xmax, mut ymax) = (0.0f64, 0.0f64);
    for w in windows {
        xmax = xmax.max(f64::from(w.x0 + w.width));
        ymax = ymax.max(f64::from(w.y0 + w.height));
    }
    for label in labels {
        let c = label.bbox.center();
        let probe = Point::new(c.x.clamp(0.0, xmax), c.y.clamp(0.0, ymax));
        for (win, slot) in windows.iter().zip(out.iter_mut()) {
            if win.contains_layer_point(probe) {
                slot.push(WindowLabel {
                    source: label.source,
                    bbox: label
                        .bbox
                        .translated(-f64::from(win.x0), -f64::from(win.y0)),
                });
            }
        }
    }
    out
}
