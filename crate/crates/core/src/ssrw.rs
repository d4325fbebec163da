//! Shape-sensitive regression weights for positive samples.
//!
//! For a positive sample point linked to a ground-truth box, the center
//! offset is projected onto the box axes (`w'`, `h'`), turned into relative
//! offsets `r_w = 2w'/w`, `r_h = 2h'/h`, then into offset measurement factors
//! `Q = ln(r + 1) + 1`. The regression weight is `mu * Q_w * Q_h * r`, where
//! `r` is the box's aspect ratio normalized over the batch.

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Point};

pub const DEFAULT_MU: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleWeightRecord {
    pub sample: Point,
    pub gt: OrientedBox,
    pub delta_d: f64,
    pub w_proj: f64,
    pub h_proj: f64,
    pub r_w: f64,
    pub r_h: f64,
    pub q_w: f64,
    pub q_h: f64,
    pub r: f64,
    pub mu: f64,
    pub w_reg: f64,
}

/// Absolute projections of `sample - center` onto the long and short axes.
pub fn project_offsets(gt: &OrientedBox, sample: Point) -> (f64, f64) {
    let (u, v) = gt.axes();
    let dx = sample.x - gt.cx();
    let dy = sample.y - gt.cy();
    ((dx * u.x + dy * u.y).abs(), (dx * v.x + dy * v.y).abs())
}

/// Aspect ratios divided by the batch maximum, so the most elongated box
/// gets exactly 1.
pub fn normalize_aspect(batch: &[OrientedBox]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument(
            "aspect normalization needs a non-empty batch".into(),
        ));
    }
    let aspects: Vec<f64> = batch.iter().map(OrientedBox::aspect_ratio).collect();
    let max = aspects.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(aspects.into_iter().map(|a| a / max).collect())
}

pub fn offset_factor(rel: f64) -> f64 {
    (rel + 1.0).ln() + 1.0
}

pub fn regression_weight(
    gt: &OrientedBox,
    sample: Point,
    r: f64,
    mu: f64,
) -> Result<SampleWeightRecord> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mu must be positive, got {mu}"
        )));
    }
    if !(r.is_finite() && r > 0.0 && r <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "normalized aspect ratio must lie in (0, 1], got {r}"
        )));
    }
    let (w_proj, h_proj) = project_offsets(gt, sample);
    let r_w = 2.0 * w_proj / gt.w();
    let r_h = 2.0 * h_proj / gt.h();
    let q_w = offset_factor(r_w);
    let q_h = offset_factor(r_h);
    Ok(SampleWeightRecord {
        sample,
        gt: *gt,
        delta_d: (sample.x - gt.cx()).hypot(sample.y - gt.cy()),
        w_proj,
        h_proj,
        r_w,
        r_h,
        q_w,
        q_h,
        r,
        mu,
        w_reg: mu * q_w * q_h * r,
    })
}

/// Ground truth together with the positive samples linked to it.
#[derive(Debug, Clone, PartialEq)]
pub struct GtSamples {
    pub gt: OrientedBox,
    pub samples: Vec<Point>,
}

/// Weights for every sample of a batch; `r` is normalized over the batch
/// given here. Records come out grouped by ground truth, in input order.
pub fn batch_weights(batch: &[GtSamples], mu: f64) -> Result<Vec<(usize, SampleWeightRecord)>> {
    let boxes: Vec<OrientedBox> = batch.iter().map(|g| g.gt).collect();
    let rs = normalize_aspect(&boxes)?;
    let mut out = Vec::new();
    for (i, (g, r)) in batch.iter().zip(rs).enumerate() {
        for &s in &g.samples {
            out.push((i, regression_weight(&g.gt, s, r, mu)?));
        }
    }
    Ok(out)
}
