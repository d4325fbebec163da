//! Seeded synthetic scenes and a perturbation detector.
//!
//! Scenes are sets of oriented ground-truth boxes drawn per length bin; the
//! detector copies ground truths with Gaussian jitter, random misses and
//! injected false positives. Detection scores are the IoU each jittered box
//! achieves against its source, so precision-recall behavior follows
//! directly from the jitter settings.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::geometry::{rotated_iou, OrientedBox};
use crate::merge::Detection;

/// Annotations shorter than this are never produced.
pub const MIN_ANNOTATED_LENGTH: f64 = 12.0;

/// Margin kept between sampled lengths and bin edges so that serialized
/// corners re-fit into the same bin.
const EDGE_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub count: usize,
    /// Exclusive lower length bound, pixels.
    pub min_len: f64,
    /// Inclusive upper length bound, pixels.
    pub max_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub height: u32,
    pub width: u32,
    pub class: String,
    pub bins: Vec<BinSpec>,
    pub aspect_min: f64,
    pub aspect_max: f64,
    pub min_length: f64,
    pub min_width: f64,
    pub angle_min: f64,
    pub angle_max: f64,
    pub max_overlap_iou: f64,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        let b = |count, min_len, max_len| BinSpec {
            count,
            min_len,
            max_len,
        };
        Self {
            height: 4096,
            width: 4096,
            class: "bridge".into(),
            // lengths stay inside [15, 1448) so every instance has a layer
            bins: vec![
                b(10, 15.0, 50.0),
                b(10, 50.0, 200.0),
                b(8, 200.0, 800.0),
                b(4, 800.0, 1440.0),
            ],
            aspect_min: 2.0,
            aspect_max: 50.0,
            min_length: MIN_ANNOTATED_LENGTH,
            min_width: 4.0,
            angle_min: -FRAC_PI_2,
            angle_max: FRAC_PI_2,
            max_overlap_iou: 0.1,
            max_attempts: 2000,
            seed: 0,
        }
    }
}

impl SceneSpec {
    /// Reads a scene from TOML; missing keys take their defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

fn sample_box(spec: &SceneSpec, bin: &BinSpec, rng: &mut ChaCha8Rng) -> Result<OrientedBox> {
    let lo = bin.min_len.max(spec.min_length) + EDGE_MARGIN;
    let hi = bin.max_len - EDGE_MARGIN;
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(Error::Infeasible(format!(
            "length range ({}, {}] is empty after the {} px floor",
            bin.min_len, bin.max_len, spec.min_length
        )));
    }
    let length = rng.gen_range(lo..hi);
    let max_aspect = spec.aspect_max.min(length / spec.min_width).max(1.0);
    let min_aspect = spec.aspect_min.min(max_aspect);
    let aspect = if max_aspect > min_aspect {
        rng.gen_range(min_aspect..max_aspect)
    } else {
        min_aspect
    };
    let theta = if spec.angle_max > spec.angle_min {
        rng.gen_range(spec.angle_min..spec.angle_max)
    } else {
        spec.angle_min
    };
    // center is placed by the caller
    OrientedBox::new(0.0, 0.0, length, length / aspect, theta)
}

/// Draws a scene. Larger bins are placed first; the output follows
/// placement order.
pub fn generate_scene(spec: &SceneSpec) -> Result<Vec<GroundTruth>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (f64::from(spec.width), f64::from(spec.height));
    let mut order: Vec<usize> = (0..spec.bins.len()).collect();
    order.sort_by(|&a, &b| spec.bins[b].max_len.total_cmp(&spec.bins[a].max_len));
    let mut placed: Vec<OrientedBox> = Vec::new();
    for bi in order {
        let bin = &spec.bins[bi];
        for k in 0..bin.count {
            let mut ok = None;
            for _ in 0..spec.max_attempts {
                let shape = sample_box(spec, bin, &mut rng)?;
                let (ex, ey) = shape.half_extents();
                if 2.0 * ex > w || 2.0 * ey > h {
                    continue;
                }
                let cx = if w - ex > ex {
                    rng.gen_range(ex..w - ex)
                } else {
                    ex
                };
                let cy = if h - ey > ey {
                    rng.gen_range(ey..h - ey)
                } else {
                    ey
                };
                let cand = shape.translated(cx, cy);
                if placed
                    .iter()
                    .all(|p| rotated_iou(p, &cand) <= spec.max_overlap_iou)
                {
                    ok = Some(cand);
                    break;
                }
            }
            let cand = ok.ok_or_else(|| {
                Error::Infeasible(format!(
                    "could not place instance {k} of bin ({}, {}] after {} attempts",
                    bin.min_len, bin.max_len, spec.max_attempts
                ))
            })?;
            placed.push(cand);
        }
    }
    Ok(placed
        .into_iter()
        .map(|b| GroundTruth::new(spec.class.clone(), b))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JitterSpec {
    /// Std. dev. of the center offset, pixels (per axis).
    pub center_px: f64,
    /// Std. dev. of the log side-length factor.
    pub size_rel: f64,
    /// Std. dev. of the angle offset, radians.
    pub angle_rad: f64,
    pub miss_rate: f64,
    pub fp_rate: f64,
}

impl Default for JitterSpec {
    fn default() -> Self {
        Self {
            center_px: 0.0,
            size_rel: 0.0,
            angle_rad: 0.0,
            miss_rate: 0.0,
            fp_rate: 0.0,
        }
    }
}

impl JitterSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("miss_rate", self.miss_rate), ("fp_rate", self.fp_rate)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in [0, 1), got {v}"
                )));
            }
        }
        for (name, v) in [
            ("center_px", self.center_px),
            ("size_rel", self.size_rel),
            ("angle_rad", self.angle_rad),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be a non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Perturbed copies of `gts` plus injected false positives.
///
/// `bounds` is the `(width, height)` of the frame false positives are drawn
/// in. Output boxes are in the same frame as the inputs.
pub fn perturb_detector(
    gts: &[GroundTruth],
    jitter: &JitterSpec,
    bounds: (f64, f64),
    seed: u64,
) -> Result<Vec<Detection>> {
    jitter.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(gts.len());
    for g in gts {
        let b = g.bbox;
        let miss = rng.gen::<f64>() < jitter.miss_rate;
        let z: [f64; 5] = std::array::from_fn(|_| rng.sample(StandardNormal));
        if !miss {
            let j = OrientedBox::new(
                b.cx() + jitter.center_px * z[0],
                b.cy() + jitter.center_px * z[1],
                b.w() * (jitter.size_rel * z[2]).exp(),
                b.h() * (jitter.size_rel * z[3]).exp(),
                b.theta() + jitter.angle_rad * z[4],
            )?;
            out.push(Detection::new(g.class.clone(), rotated_iou(&j, &b), j));
        }
        if rng.gen::<f64>() < jitter.fp_rate {
            let cx = rng.gen_range(0.0..bounds.0.max(f64::MIN_POSITIVE));
            let cy = rng.gen_range(0.0..bounds.1.max(f64::MIN_POSITIVE));
            let theta = rng.gen_range(-FRAC_PI_2..FRAC_PI_2);
            let score = rng.gen_range(0.0..0.5);
            let fp = OrientedBox::new(cx, cy, b.w(), b.h(), theta)?;
            out.push(Detection::new(g.class.clone(), score, fp));
        }
    }
    Ok(out)
}

/// Derives an independent seed for a named sub-stream of a run.
pub fn substream_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = splitmix(base);
    for &p in parts {
        x = splitmix(x ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
