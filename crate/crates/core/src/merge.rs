//! Mapping per-window detections back to the original image and merging
//! them into one detection set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment::LayerThresholds;
use crate::error::{Error, Result};
use crate::geometry::{rotated_nms, OrientedBox, Scored};
use crate::pyramid::PyramidTiling;

/// Which coordinate frame a detection box is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    Window,
    Layer,
    Original,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class: String,
    pub score: f64,
    pub bbox: OrientedBox,
    /// 1-based pyramid layer that produced the detection.
    pub layer: usize,
    /// Row-major window index within that layer.
    pub window: usize,
    pub frame: Frame,
}

impl Detection {
    pub fn new(class: impl Into<String>, score: f64, bbox: OrientedBox) -> Self {
        Self {
            class: class.into(),
            score,
            bbox,
            layer: 1,
            window: 0,
            frame: Frame::Original,
        }
    }
}

impl Scored for Detection {
    fn obb(&self) -> &OrientedBox {
        &self.bbox
    }

    fn score(&self) -> f64 {
        self.score
    }
}

/// How detections from different layers are reconciled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMode {
    /// Class-wise rotated NMS across all layers and windows.
    #[default]
    Nms,
    /// Each length belongs to exactly one layer; detections from other
    /// layers are dropped and NMS only runs within a layer.
    ExclusiveBands,
}

/// Window/layer-frame detections to original-frame detections.
pub fn remap_to_original(dets: &[Detection], tiling: &PyramidTiling) -> Result<Vec<Detection>> {
    dets.iter()
        .enumerate()
        .map(|(index, d)| {
            let bbox = match d.frame {
                Frame::Original => d.bbox,
                Frame::Layer => {
                    if d.layer == 0 || d.layer > tiling.plan.n() {
                        return Err(Error::UnknownProvenance {
                            index,
                            layer: d.layer,
                            window: d.window,
                        });
                    }
                    d.bbox.scaled(tiling.plan.scale(d.layer))
                }
                Frame::Window => {
                    let win = tiling
                        .window(d.layer, d.window)
                        .ok_or(Error::UnknownProvenance {
                            index,
                            layer: d.layer,
                            window: d.window,
                        })?;
                    d.bbox
                        .translated(f64::from(win.x0), f64::from(win.y0))
                        .scaled(win.scale)
                }
            };
            Ok(Detection {
                bbox,
                frame: Frame::Original,
                ..d.clone()
            })
        })
        .collect()
}

/// Keeps a detection from layer `m` only if its longer side lies in that
/// layer's band.
pub fn scale_filter(dets: &[Detection], th: &LayerThresholds) -> Vec<Detection> {
    dets.iter()
        .filter(|d| th.in_band(d.layer, d.bbox.length()))
        .cloned()
        .collect()
}

pub fn exclusive_band_filter(
    dets: &[Detection],
    th: &LayerThresholds,
    n_layers: usize,
) -> Vec<Detection> {
    dets.iter()
        .filter(|d| th.in_exclusive_band(d.layer, n_layers, d.bbox.length()))
        .cloned()
        .collect()
}

fn sort_final(out: &mut [(usize, Detection)]) {
    out.sort_by(|(i, a), (j, b)| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.class.cmp(&b.class))
            .then(i.cmp(j))
    });
}

/// Class-wise rotated NMS over all detections. Output is ordered by
/// descending score, then class, then input position.
pub fn global_merge(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        by_class.entry(d.class.as_str()).or_default().push(i);
    }
    let mut kept = Vec::new();
    for idx in by_class.values() {
        let group: Vec<&Detection> = idx.iter().map(|&i| &dets[i]).collect();
        for k in rotated_nms(&group, iou_threshold) {
            kept.push((idx[k], dets[idx[k]].clone()));
        }
    }
    sort_final(&mut kept);
    kept.into_iter().map(|(_, d)| d).collect()
}

/// NMS within each (class, layer) group only.
pub fn per_layer_merge(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut groups: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        groups
            .entry((d.class.as_str(), d.layer))
            .or_default()
            .push(i);
    }
    let mut kept = Vec::new();
    for idx in groups.values() {
        let group: Vec<&Detection> = idx.iter().map(|&i| &dets[i]).collect();
        for k in rotated_nms(&group, iou_threshold) {
            kept.push((idx[k], dets[idx[k]].clone()));
        }
    }
    sort_final(&mut kept);
    kept.into_iter().map(|(_, d)| d).collect()
}

/// Scale filtering (optional) followed by the merge selected by `mode`.
pub fn merge_detections(
    dets: &[Detection],
    th: &LayerThresholds,
    n_layers: usize,
    iou_threshold: f64,
    filter: bool,
    mode: MergeMode,
) -> Vec<Detection> {
    match mode {
        MergeMode::Nms => {
            if filter {
                global_merge(&scale_filter(dets, th), iou_threshold)
            } else {
                global_merge(dets, iou_threshold)
            }
        }
        MergeMode::ExclusiveBands => {
            per_layer_merge(&exclusive_band_filter(dets, th, n_layers), iou_threshold)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pyramid::plan_pyramid;

    fn obb(cx: f64, cy: f64, w: f64, h: f64, t: f64) -> OrientedBox {
        OrientedBox::new(cx, cy, w, h, t).unwrap()
    }

    fn tiling() -> PyramidTiling {
        PyramidTiling::new(plan_pyramid(4096, 4096, 2.0, 1024, 1024).unwrap(), 200).unwrap()
    }

    fn in_window(layer: usize, window: usize, b: OrientedBox, score: f64) -> Detection {
        Detection {
            class: "bridge".into(),
            score,
            bbox: b,
            layer,
            window,
            frame: Frame::Window,
        }
    }

    #[test]
    fn remap_examples() {
        let t = tiling();
        let b = obb(100.0, 100.0, 40.0, 10.0, 0.3);
        let same = remap_to_original(&[in_window(1, 0, b, 0.5)], &t).unwrap();
        assert_eq!(same[0].bbox, b);
        assert_eq!(same[0].frame, Frame::Original);

        assert_eq!((t.layers[1][1].x0, t.layers[1][1].y0), (824, 0));
        let up = remap_to_original(&[in_window(2, 1, b, 0.5)], &t).unwrap();
        let r = up[0].bbox;
        assert_eq!(
            (r.cx(), r.cy(), r.w(), r.h(), r.theta()),
            (1848.0, 200.0, 80.0, 20.0, 0.3)
        );

        let win = t.window(2, 1).unwrap();
        let back = r.scaled(1.0 / win.scale).translated(-824.0, 0.0);
        assert!((back.cx() - b.cx()).abs() < 1e-6 && (back.w() - b.w()).abs() < 1e-6);
    }

    #[test]
    fn remap_unknown_window() {
        let t = tiling();
        let b = obb(1.0, 1.0, 4.0, 2.0, 0.0);
        assert!(matches!(
            remap_to_original(&[in_window(2, 99, b, 0.5)], &t),
            Err(Error::UnknownProvenance { window: 99, .. })
        ));
        assert!(remap_to_original(&[in_window(7, 0, b, 0.5)], &t).is_err());
    }

    #[test]
    fn scale_filter_examples() {
        let th = LayerThresholds::default();
        let d = |layer, len| Detection {
            layer,
            ..Detection::new("bridge", 0.9, obb(0.0, 0.0, len, 3.0, 0.0))
        };
        let kept = scale_filter(&[d(1, 20.0), d(2, 20.0), d(1, 1448.0), d(3, 2000.0)], &th);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].layer, 1);
    }

    #[test]
    fn merge_examples() {
        let a = obb(500.0, 500.0, 100.0, 20.0, 0.1);
        let b = a.translated(0.5, 0.0);
        assert!(crate::geometry::rotated_iou(&a, &b) > 0.9);
        let out = global_merge(
            &[
                Detection::new("bridge", 0.7, b),
                Detection::new("bridge", 0.8, a),
            ],
            0.5,
        );
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.8);

        let far = Detection::new("bridge", 0.1, a.translated(1000.0, 0.0));
        let out = global_merge(&[Detection::new("bridge", 0.7, a), far.clone()], 0.5);
        assert_eq!(out.len(), 2);

        // different classes never suppress each other
        let out = global_merge(
            &[
                Detection::new("bridge", 0.7, a),
                Detection::new("dam", 0.6, a),
            ],
            0.5,
        );
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn merge_is_idempotent() {
        let base = obb(300.0, 300.0, 80.0, 12.0, -0.4);
        let dets: Vec<Detection> = (0..30)
            .map(|k| {
                let f = k as f64;
                Detection::new(
                    if k % 3 == 0 { "a" } else { "b" },
                    (f * 0.37).fract(),
                    base.translated((f * 7.3) % 50.0, (f * 3.1) % 40.0),
                )
            })
            .collect();
        let once = global_merge(&dets, 0.3);
        let twice = global_merge(&once, 0.3);
        assert_eq!(once, twice);
        assert!(once.len() <= dets.len());
        assert!(once.iter().all(|d| dets.contains(d)));
    }

    #[test]
    fn exclusive_mode_keeps_one_layer_per_object() {
        let th = LayerThresholds::default();
        let b = obb(1000.0, 1000.0, 100.0, 10.0, 0.0);
        let dets: Vec<Detection> = (1..=3)
            .map(|layer| Detection {
                layer,
                ..Detection::new("bridge", 1.0, b)
            })
            .collect();
        let out = merge_detections(&dets, &th, 3, 0.5, true, MergeMode::ExclusiveBands);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].layer, 3);
        let out = merge_detections(&dets, &th, 3, 0.5, true, MergeMode::Nms);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].layer, 1);
    }
}
