//! Independent reference implementations shared by the integration tests and
//! the acceptance gate. Nothing here calls into the code it checks except
//! for plain data types and, where stated, `rotated_iou`.

#![allow(dead_code)]

use std::collections::BTreeSet;

use holodet::eval::LengthBins;
use holodet::geometry::rotated_iou;
use holodet::merge::Detection;
use holodet::{GroundTruth, ImageData, OrientedBox};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn obb(cx: f64, cy: f64, w: f64, h: f64, t: f64) -> OrientedBox {
    OrientedBox::new(cx, cy, w, h, t).unwrap()
}

/// Point-in-rectangle test done in the rectangle's own frame.
fn inside(b: &OrientedBox, cos: f64, sin: f64, x: f64, y: f64) -> bool {
    let dx = x - b.cx();
    let dy = y - b.cy();
    let u = dx * cos + dy * sin;
    let v = -dx * sin + dy * cos;
    u.abs() <= b.w() / 2.0 && v.abs() <= b.h() / 2.0
}

/// IoU estimated from `side * side` stratified samples over the smaller box.
pub fn monte_carlo_iou(a: &OrientedBox, b: &OrientedBox, side: usize, rng: &mut ChaCha8Rng) -> f64 {
    let (small, big) = if a.area() <= b.area() { (a, b) } else { (b, a) };
    let (cs, ss) = (small.theta().cos(), small.theta().sin());
    let (cb, sb) = (big.theta().cos(), big.theta().sin());
    let n = side as f64;
    let mut hits = 0u64;
    for i in 0..side {
        for j in 0..side {
            let u = ((i as f64 + rng.gen::<f64>()) / n - 0.5) * small.w();
            let v = ((j as f64 + rng.gen::<f64>()) / n - 0.5) * small.h();
            let x = small.cx() + u * cs - v * ss;
            let y = small.cy() + u * ss + v * cs;
            if inside(big, cb, sb, x, y) {
                hits += 1;
            }
        }
    }
    let inter = small.area() * hits as f64 / (n * n);
    inter / (a.area() + b.area() - inter)
}

pub fn random_box(rng: &mut ChaCha8Rng, extent: f64, max_side: f64) -> OrientedBox {
    let w = rng.gen_range(1.0..max_side);
    let h = rng.gen_range(0.5..w);
    obb(
        rng.gen_range(0.0..extent),
        rng.gen_range(0.0..extent),
        w,
        h,
        rng.gen_range(-4.0..4.0),
    )
}

/// Straightforward greedy NMS: repeatedly take the best remaining box and
/// drop everything that overlaps it too much.
pub fn brute_nms(boxes: &[(OrientedBox, f64)], thr: f64) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..boxes.len()).collect();
    let mut kept = Vec::new();
    while !alive.is_empty() {
        let mut best = 0;
        for k in 1..alive.len() {
            let (i, j) = (alive[k], alive[best]);
            if boxes[i].1 > boxes[j].1 || (boxes[i].1 == boxes[j].1 && i < j) {
                best = k;
            }
        }
        let top = alive.remove(best);
        kept.push(top);
        alive.retain(|&i| rotated_iou(&boxes[i].0, &boxes[top].0) <= thr);
    }
    kept
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveReport {
    pub per_threshold: Vec<Option<f64>>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub map: Option<f64>,
    pub bins: Vec<Option<f64>>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Outcome of one detection: Some(true) TP, Some(false) FP, None ignored.
type Flag = Option<bool>;

/// AP of one class at one IoU threshold with ground truths restricted by
/// `scope`. Returns (AP, tp, fp, fn).
fn naive_class_ap(
    images: &[ImageData],
    class: &str,
    thr: f64,
    scope: &dyn Fn(&GroundTruth) -> bool,
) -> (Option<f64>, usize, usize, usize) {
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    for (im, img) in images.iter().enumerate() {
        for (d, det) in img.dets.iter().enumerate() {
            if det.class == class {
                all.push((det.score, im, d));
            }
        }
    }
    all.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut used: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut flags: Vec<Flag> = Vec::new();
    for &(_, im, d) in &all {
        let det = &images[im].dets[d];
        let mut best_in: Option<(usize, f64)> = None;
        let mut best_out: Option<(usize, f64)> = None;
        for (g, gt) in images[im].gts.iter().enumerate() {
            if gt.class != class || used.contains(&(im, g)) {
                continue;
            }
            let iou = rotated_iou(&det.bbox, &gt.bbox);
            if iou < thr {
                continue;
            }
            let slot = if scope(gt) {
                &mut best_in
            } else {
                &mut best_out
            };
            match slot {
                Some((_, b)) if *b >= iou => {}
                _ => *slot = Some((g, iou)),
            }
        }
        if let Some((g, _)) = best_in {
            used.insert((im, g));
            flags.push(Some(true));
        } else if let Some((g, _)) = best_out {
            used.insert((im, g));
            flags.push(None);
        } else {
            flags.push(Some(false));
        }
    }
    let mut npos = 0;
    let mut matched_in_scope = 0;
    for (im, img) in images.iter().enumerate() {
        for (g, gt) in img.gts.iter().enumerate() {
            if gt.class == class && scope(gt) {
                npos += 1;
                if used.contains(&(im, g)) {
                    matched_in_scope += 1;
                }
            }
        }
    }
    let tp_total = flags.iter().filter(|f| **f == Some(true)).count();
    let fp_total = flags.iter().filter(|f| **f == Some(false)).count();
    assert_eq!(tp_total, matched_in_scope);
    if npos == 0 {
        return (None, tp_total, fp_total, 0);
    }
    // cumulative (tp, fp) after each counted detection
    let mut steps: Vec<(usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for f in &flags {
        match f {
            Some(true) => tp += 1,
            Some(false) => fp += 1,
            None => continue,
        }
        steps.push((tp, fp));
    }
    let mut sum = 0.0;
    for level in 0..=10usize {
        let mut best = 0.0f64;
        for &(tp, fp) in &steps {
            if tp * 10 >= level * npos {
                best = best.max(tp as f64 / (tp + fp) as f64);
            }
        }
        sum += best;
    }
    (Some(sum / 11.0), tp_total, fp_total, npos - tp_total)
}

fn mean_of_defined(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    if d.is_empty() {
        None
    } else {
        Some(d.iter().sum::<f64>() / d.len() as f64)
    }
}

pub fn naive_evaluate(
    images: &[ImageData],
    sweep: &[f64],
    bin_iou: f64,
    bins: &LengthBins,
) -> NaiveReport {
    let classes: BTreeSet<String> = images
        .iter()
        .flat_map(|im| im.gts.iter().map(|g| g.class.clone()))
        .collect();
    let everything = |_: &GroundTruth| true;
    let ap_at = |thr: f64, scope: &dyn Fn(&GroundTruth) -> bool| {
        let aps: Vec<Option<f64>> = classes
            .iter()
            .map(|c| naive_class_ap(images, c, thr, scope).0)
            .collect();
        mean_of_defined(&aps)
    };
    let per_threshold: Vec<Option<f64>> = sweep.iter().map(|&t| ap_at(t, &everything)).collect();
    let map = if per_threshold.iter().all(Option::is_some) && !per_threshold.is_empty() {
        Some(per_threshold.iter().flatten().sum::<f64>() / per_threshold.len() as f64)
    } else {
        None
    };
    let bin_aps = bins
        .bins
        .iter()
        .map(|b| {
            let (lo, hi) = (b.lo, b.hi);
            ap_at(bin_iou, &move |g: &GroundTruth| {
                let l = g.bbox.w().max(g.bbox.h());
                l > lo && l <= hi
            })
        })
        .collect();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for c in &classes {
        let (_, t, f, n) = naive_class_ap(images, c, bin_iou, &everything);
        tp += t;
        fp += f;
        fn_ += n;
    }
    NaiveReport {
        per_threshold,
        ap50: ap_at(0.5, &everything),
        ap75: ap_at(0.75, &everything),
        map,
        bins: bin_aps,
        tp,
        fp,
        fn_,
    }
}

/// A small multi-image, two-class dataset with misses, duplicates, loose
/// localizations, false positives and tied scores.
pub fn random_dataset(rng: &mut ChaCha8Rng, max_instances: usize) -> Vec<ImageData> {
    let n_images = rng.gen_range(1..=4);
    let per_image = max_instances / n_images;
    let classes = ["bridge", "dam"];
    (0..n_images)
        .map(|_| {
            let n = rng.gen_range(1..=per_image);
            let mut gts = Vec::with_capacity(n);
            let mut dets = Vec::new();
            for _ in 0..n {
                let length = (rng.gen_range(2.5f64..7.6)).exp();
                let aspect = rng.gen_range(1.5..20.0);
                let b = obb(
                    rng.gen_range(0.0..6000.0),
                    rng.gen_range(0.0..6000.0),
                    length,
                    (length / aspect).max(2.0),
                    rng.gen_range(-1.6..1.6),
                );
                let class = classes[usize::from(rng.gen_bool(0.3))];
                gts.push(GroundTruth::new(class, b));
                let copies = if rng.gen_bool(0.15) {
                    0
                } else if rng.gen_bool(0.2) {
                    2
                } else {
                    1
                };
                for _ in 0..copies {
                    let s = rng.gen_range(0.0..0.35);
                    let j = obb(
                        b.cx() + rng.gen_range(-s..s) * b.h(),
                        b.cy() + rng.gen_range(-s..s) * b.h(),
                        b.w() * (1.0 + rng.gen_range(-s..s)),
                        b.h() * (1.0 + rng.gen_range(-s..s)),
                        b.theta() + rng.gen_range(-s..s) * 0.3,
                    );
                    let score = (rng.gen_range(0.0..1.0f64) * 20.0).round() / 20.0;
                    dets.push(Detection::new(class, score, j));
                }
            }
            let n_fp = (0.3 * n as f64) as usize;
            for _ in 0..n_fp {
                let b = random_box(rng, 6000.0, 400.0);
                let score = (rng.gen_range(0.0..1.0f64) * 20.0).round() / 20.0;
                dets.push(Detection::new(
                    classes[usize::from(rng.gen_bool(0.5))],
                    score,
                    b,
                ));
            }
            ImageData { gts, dets }
        })
        .collect()
}
