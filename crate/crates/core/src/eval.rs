//! Detection evaluation: greedy IoU matching, 11-point interpolated AP, an
//! IoU sweep for mAP and AP restricted to longer-side length bins.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{rotated_iou, OrientedBox};
use crate::merge::Detection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBin {
    pub name: String,
    /// Exclusive lower bound.
    pub lo: f64,
    /// Inclusive upper bound.
    pub hi: f64,
}

/// Contiguous, right-closed length intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBins {
    pub bins: Vec<LengthBin>,
}

impl Default for LengthBins {
    fn default() -> Self {
        let b = |name: &str, lo, hi| LengthBin {
            name: name.to_string(),
            lo,
            hi,
        };
        Self {
            bins: vec![
                b("short", 0.0, 50.0),
                b("middle", 50.0, 200.0),
                b("large", 200.0, 800.0),
                b("huge", 800.0, 16384.0),
            ],
        }
    }
}

impl LengthBins {
    pub fn bin_of(&self, length: f64) -> Option<usize> {
        self.bins
            .iter()
            .position(|b| length > b.lo && length <= b.hi)
    }

    pub fn is_contiguous(&self) -> bool {
        self.bins.iter().all(|b| b.lo < b.hi) && self.bins.windows(2).all(|p| p[0].hi == p[1].lo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub class: String,
    pub bbox: OrientedBox,
    pub difficult: bool,
}

impl GroundTruth {
    pub fn new(class: impl Into<String>, bbox: OrientedBox) -> Self {
        Self {
            class: class.into(),
            bbox,
            difficult: false,
        }
    }
}

/// Ground truths and detections of one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageData {
    pub gts: Vec<GroundTruth>,
    pub dets: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Tp,
    Fp,
    /// Matched a ground truth outside the evaluated scope.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Per detection, in input order.
    pub outcomes: Vec<Outcome>,
    pub false_negatives: usize,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.outcomes.iter().filter(|o| **o == Outcome::Tp).count()
    }

    pub fn fp(&self) -> usize {
        self.outcomes.iter().filter(|o| **o == Outcome::Fp).count()
    }
}

/// Greedy matching on a precomputed IoU matrix (`ious[d][g]`).
///
/// Detections go in descending score (ties by index). Each takes the
/// unmatched in-scope ground truth with the highest IoU at or above the
/// threshold; failing that, an unmatched out-of-scope one (the detection is
/// then ignored); failing that, it is a false positive.
fn greedy_match(scores: &[f64], ious: &[Vec<f64>], in_scope: &[bool], thr: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut taken = vec![false; in_scope.len()];
    let mut outcomes = vec![Outcome::Fp; scores.len()];
    for d in order {
        let mut best: [Option<(usize, f64)>; 2] = [None, None];
        for (g, &iou) in ious[d].iter().enumerate() {
            if taken[g] || iou < thr {
                continue;
            }
            let slot = usize::from(!in_scope[g]);
            if best[slot].is_none_or(|(_, b)| iou > b) {
                best[slot] = Some((g, iou));
            }
        }
        if let Some((g, _)) = best[0] {
            taken[g] = true;
            outcomes[d] = Outcome::Tp;
        } else if let Some((g, _)) = best[1] {
            taken[g] = true;
            outcomes[d] = Outcome::Ignored;
        }
    }
    let false_negatives = in_scope
        .iter()
        .zip(&taken)
        .filter(|(s, t)| **s && !**t)
        .count();
    MatchResult {
        outcomes,
        false_negatives,
    }
}

/// Single image, single class matching of `dets` against `gts`.
pub fn match_detections(
    dets: &[Detection],
    gts: &[OrientedBox],
    iou_threshold: f64,
) -> MatchResult {
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let ious: Vec<Vec<f64>> = dets
        .iter()
        .map(|d| gts.iter().map(|g| rotated_iou(&d.bbox, g)).collect())
        .collect();
    greedy_match(&scores, &ious, &vec![true; gts.len()], iou_threshold)
}

/// 11-point interpolated AP from `(recall, precision)` points: the mean over
/// recall levels `0, 0.1, ..., 1` of the best precision at recall >= level.
pub fn voc07_ap(pr: &[(f64, f64)]) -> f64 {
    voc07_curve(pr).iter().sum::<f64>() / 11.0
}

/// Interpolated precision at the eleven recall levels.
pub fn voc07_curve(pr: &[(f64, f64)]) -> [f64; 11] {
    let mut out = [0.0; 11];
    for (t, slot) in out.iter_mut().enumerate() {
        let level = t as f64 / 10.0;
        *slot = pr
            .iter()
            .filter(|(r, _)| *r >= level)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
    }
    out
}

/// PR points from scored outcomes pooled over a dataset.
pub fn pr_points(mut scored: Vec<(f64, usize, usize, Outcome)>, npos: usize) -> Vec<(f64, f64)> {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut pts = Vec::with_capacity(scored.len());
    for (_, _, _, o) in scored {
        match o {
            Outcome::Tp => tp += 1,
            Outcome::Fp => fp += 1,
            Outcome::Ignored => continue,
        }
        pts.push((tp as f64 / npos as f64, tp as f64 / (tp + fp) as f64));
    }
    pts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// IoU thresholds averaged into mAP.
    pub iou_sweep: Vec<f64>,
    /// IoU threshold for the per-bin APs and the TP/FP/FN counts.
    pub bin_iou: f64,
    pub bins: LengthBins,
}

pub fn default_iou_sweep() -> Vec<f64> {
    (0..10).map(|k| 0.5 + 0.05 * f64::from(k)).collect()
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_sweep: default_iou_sweep(),
            bin_iou: 0.5,
            bins: LengthBins::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinReport {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub gt_count: usize,
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_threshold: Vec<(f64, Option<f64>)>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub map: Option<f64>,
    pub bins: Vec<BinReport>,
    pub gt_count: usize,
    pub det_count: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Class-averaged interpolated precision at recall 0, 0.1, ..., 1 (IoU 0.5).
    pub pr_curve: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn bin(&self, name: &str) -> Option<&BinReport> {
        self.bins.iter().find(|b| b.name == name)
    }

    /// `metric,value` lines; absent values are written as `NA`.
    pub fn to_delimited(&self) -> String {
        let mut s = String::from("metric,value\n");
        let f = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
        s += &format!(
            "mAP,{}\nAP50,{}\nAP75,{}\n",
            f(self.map),
            f(self.ap50),
            f(self.ap75)
        );
        for (t, ap) in &self.per_threshold {
            s += &format!("AP@{t:.2},{}\n", f(*ap));
        }
        for b in &self.bins {
            s += &format!("AP_{},{}\n", b.name, f(b.ap));
        }
        s += &format!(
            "gt,{}\ndet,{}\nTP,{}\nFP,{}\nFN,{}\n",
            self.gt_count, self.det_count, self.tp, self.fp, self.fn_
        );
        s
    }
}

fn fmt_ap(v: Option<f64>) -> String {
    v.map_or_else(|| "     n/a".to_string(), |x| format!("{:8.4}", x))
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12}{}", "mAP", fmt_ap(self.map))?;
        writeln!(f, "{:<12}{}", "AP50", fmt_ap(self.ap50))?;
        writeln!(f, "{:<12}{}", "AP75", fmt_ap(self.ap75))?;
        for b in &self.bins {
            writeln!(
                f,
                "{:<12}{}   ({:.0}, {:.0}]  gt={}",
                format!("AP_{}", b.name),
                fmt_ap(b.ap),
                b.lo,
                b.hi,
                b.gt_count
            )?;
        }
        writeln!(
            f,
            "counts      gt={} det={} TP={} FP={} FN={}",
            self.gt_count, self.det_count, self.tp, self.fp, self.fn_
        )?;
        write!(f, "AP by IoU  ")?;
        for (t, ap) in &self.per_threshold {
            write!(
                f,
                " {t:.2}:{}",
                ap.map_or("n/a".to_string(), |x| format!("{x:.4}"))
            )?;
        }
        writeln!(f)
    }
}

/// IoUs between every detection and every same-class ground truth.
struct ClassImage {
    scores: Vec<f64>,
    ious: Vec<Vec<f64>>,
    lengths: Vec<f64>,
}

fn class_images(images: &[ImageData], class: &str) -> Vec<ClassImage> {
    images
        .par_iter()
        .map(|img| {
            let gts: Vec<&GroundTruth> = img.gts.iter().filter(|g| g.class == class).collect();
            let dets: Vec<&Detection> = img.dets.iter().filter(|d| d.class == class).collect();
            ClassImage {
                scores: dets.iter().map(|d| d.score).collect(),
                ious: dets
                    .iter()
                    .map(|d| gts.iter().map(|g| rotated_iou(&d.bbox, &g.bbox)).collect())
                    .collect(),
                lengths: gts.iter().map(|g| g.bbox.length()).collect(),
            }
        })
        .collect()
}

struct ClassResult {
    ap: Option<f64>,
    curve: [f64; 11],
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn class_ap(data: &[ClassImage], thr: f64, scope: &dyn Fn(f64) -> bool) -> ClassResult {
    let mut scored = Vec::new();
    let (mut npos, mut tp, mut fp, mut fn_) = (0, 0, 0, 0);
    for (im, ci) in data.iter().enumerate() {
        let in_scope: Vec<bool> = ci.lengths.iter().map(|&l| scope(l)).collect();
        npos += in_scope.iter().filter(|s| **s).count();
        let m = greedy_match(&ci.scores, &ci.ious, &in_scope, thr);
        tp += m.tp();
        fp += m.fp();
        fn_ += m.false_negatives;
        scored.extend(
            m.outcomes
                .iter()
                .enumerate()
                .map(|(d, &o)| (ci.scores[d], im, d, o)),
        );
    }
    if npos == 0 {
        return ClassResult {
            ap: None,
            curve: [0.0; 11],
            tp,
            fp,
            fn_,
        };
    }
    let pts = pr_points(scored, npos);
    let curve = voc07_curve(&pts);
    ClassResult {
        ap: Some(curve.iter().sum::<f64>() / 11.0),
        curve,
        tp,
        fp,
        fn_,
    }
}

fn mean_defined(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Full evaluation. APs are computed per class and averaged over classes that
/// have ground truth in scope.
pub fn evaluate(images: &[ImageData], cfg: &EvalConfig) -> EvalReport {
    let classes: BTreeSet<&str> = images
        .iter()
        .flat_map(|im| im.gts.iter().map(|g| g.class.as_str()))
        .collect();
    let data: Vec<Vec<ClassImage>> = classes.iter().map(|c| class_images(images, c)).collect();
    let all = |_: f64| true;

    let ap_at = |thr: f64| mean_defined(data.iter().map(|d| class_ap(d, thr, &all).ap));
    let per_threshold: Vec<(f64, Option<f64>)> =
        cfg.iou_sweep.iter().map(|&t| (t, ap_at(t))).collect();
    let map = if per_threshold.is_empty() || per_threshold.iter().any(|(_, a)| a.is_none()) {
        None
    } else {
        Some(per_threshold.iter().filter_map(|(_, a)| *a).sum::<f64>() / per_threshold.len() as f64)
    };

    let base: Vec<ClassResult> = data
        .iter()
        .map(|d| class_ap(d, cfg.bin_iou, &all))
        .collect();
    let mut pr_curve = Vec::with_capacity(11);
    let defined: Vec<&ClassResult> = base.iter().filter(|r| r.ap.is_some()).collect();
    for t in 0..11 {
        let p = if defined.is_empty() {
            0.0
        } else {
            defined.iter().map(|r| r.curve[t]).sum::<f64>() / defined.len() as f64
        };
        pr_curve.push((t as f64 / 10.0, p));
    }

    let bins = cfg
        .bins
        .bins
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let scope = |l: f64| cfg.bins.bin_of(l) == Some(k);
            let gt_count = images
                .iter()
                .flat_map(|im| &im.gts)
                .filter(|g| scope(g.bbox.length()))
                .count();
            BinReport {
                name: b.name.clone(),
                lo: b.lo,
                hi: b.hi,
                gt_count,
                ap: mean_defined(data.iter().map(|d| class_ap(d, cfg.bin_iou, &scope).ap)),
            }
        })
        .collect();

    EvalReport {
        per_threshold,
        ap50: ap_at(0.5),
        ap75: ap_at(0.75),
        map,
        bins,
        gt_count: images.iter().map(|im| im.gts.len()).sum(),
        det_count: images.iter().map(|im| im.dets.len()).sum(),
        tp: base.iter().map(|r| r.tp).sum(),
        fp: base.iter().map(|r| r.fp).sum(),
        fn_: base.iter().map(|r| r.fn_).sum(),
        pr_curve,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obb(cx: f64, cy: f64, w: f64, h: f64, t: f64) -> OrientedBox {
        OrientedBox::new(cx, cy, w, h, t).unwrap()
    }

    fn det(score: f64, b: OrientedBox) -> Detection {
        Detection::new("bridge", score, b)
    }

    #[test]
    fn default_bins_partition() {
        let bins = LengthBins::default();
        assert!(bins.is_contiguous());
        assert_eq!(bins.bin_of(50.0), Some(0));
        assert_eq!(bins.bin_of(50.000001), Some(1));
        assert_eq!(bins.bin_of(800.0), Some(2));
        assert_eq!(bins.bin_of(16384.0), Some(3));
        assert_eq!(bins.bin_of(0.0), None);
    }

    #[test]
    fn match_examples() {
        let g = [
            obb(10.0, 10.0, 20.0, 4.0, 0.0),
            obb(100.0, 10.0, 20.0, 4.0, 0.0),
        ];
        let m = match_detections(&[det(0.9, g[0]), det(0.8, g[1])], &g, 0.5);
        assert_eq!(m.outcomes, vec![Outcome::Tp, Outcome::Tp]);
        assert_eq!(m.false_negatives, 0);

        let m = match_detections(
            &[det(0.6, g[0]), det(0.9, g[0].translated(0.5, 0.0))],
            &g,
            0.5,
        );
        assert_eq!(m.outcomes, vec![Outcome::Fp, Outcome::Tp]);
        assert_eq!(m.false_negatives, 1);
    }

    #[test]
    fn voc07_examples() {
        assert_eq!(voc07_ap(&[(0.5, 1.0), (1.0, 1.0)]), 1.0);
        assert_eq!(voc07_ap(&[(1.0, 1.0)]), 1.0);
        assert_eq!(voc07_ap(&[(0.0, 0.0)]), 0.0);
        assert_eq!(voc07_ap(&[]), 0.0);
        let stair: Vec<(f64, f64)> = (1..=10)
            .map(|k| (k as f64 / 10.0, if k <= 5 { 1.0 } else { 0.5 }))
            .collect();
        assert!((voc07_ap(&stair) - 8.5 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn single_pair_ap() {
        let g = obb(10.0, 10.0, 20.0, 4.0, 0.0);
        let cfg = EvalConfig::default();
        let good = ImageData {
            gts: vec![GroundTruth::new("bridge", g)],
            dets: vec![det(0.9, g)],
        };
        assert_eq!(evaluate(&[good], &cfg).ap50, Some(1.0));
        let bad = ImageData {
            gts: vec![GroundTruth::new("bridge", g)],
            dets: vec![det(0.9, g.translated(500.0, 0.0))],
        };
        let r = evaluate(&[bad], &cfg);
        assert_eq!(r.ap50, Some(0.0));
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 1));
    }

    #[test]
    fn no_ground_truth_is_absent() {
        let r = evaluate(&[ImageData::default()], &EvalConfig::default());
        assert_eq!(r.map, None);
        assert!(r.bins.iter().all(|b| b.ap.is_none()));
    }

    #[test]
    fn out_of_bin_matches_are_ignored() {
        let short = obb(10.0, 10.0, 30.0, 4.0, 0.0);
        let huge = obb(500.0, 500.0, 900.0, 40.0, 0.0);
        let img = ImageData {
            gts: vec![
                GroundTruth::new("bridge", short),
                GroundTruth::new("bridge", huge),
            ],
            dets: vec![det(0.95, huge), det(0.5, short)],
        };
        let r = evaluate(&[img], &EvalConfig::default());
        assert_eq!(r.bin("short").unwrap().ap, Some(1.0));
        assert_eq!(r.bin("huge").unwrap().ap, Some(1.0));
        assert_eq!(r.bin("middle").unwrap().ap, None);
        assert_eq!(r.bin("short").unwrap().gt_count, 1);
    }

    #[test]
    fn delimited_output_lists_bins() {
        let g = obb(10.0, 10.0, 20.0, 4.0, 0.0);
        let img = ImageData {
            gts: vec![GroundTruth::new("bridge", g)],
            dets: vec![det(1.0, g)],
        };
        let r = evaluate(&[img], &EvalConfig::default());
        let s = r.to_delimited();
        assert!(s.contains("mAP,1.000000"));
        assert!(s.contains("AP_middle,NA"));
    }
}
