//! Oriented and axis-aligned boxes, rotated IoU and rotated NMS.
//!
//! Boxes live in image coordinates with the y axis pointing down. An
//! [`OrientedBox`] is always stored in long-side-first form: `w >= h > 0`
//! and `theta` (the direction of the long side, radians) in `[-pi/2, pi/2)`.
//! A rectangle is symmetric under rotation by `pi`, so this form is unique
//! for every non-square footprint.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};

/// Intersections smaller than this (px^2) are treated as empty.
pub const AREA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// A rotated rectangle in canonical long-side-first form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
}

/// Wraps an angle into `[-pi/2, pi/2)`. Values already in range are returned
/// unchanged so the operation is idempotent bit for bit.
pub fn wrap_half_turn(theta: f64) -> f64 {
    if (-FRAC_PI_2..FRAC_PI_2).contains(&theta) {
        return theta;
    }
    let mut t = (theta + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if t >= FRAC_PI_2 {
        t -= PI;
    }
    if t < -FRAC_PI_2 {
        t += PI;
    }
    t
}

/// Brings raw `(cx, cy, w, h, theta)` into canonical form without changing
/// the footprint: sides are swapped if needed (rotating `theta` by a quarter
/// turn) and the angle is wrapped into `[-pi/2, pi/2)`.
pub fn canonicalize(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<OrientedBox> {
    if ![cx, cy, w, h, theta].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidBox(format!(
            "non-finite parameter in ({cx}, {cy}, {w}, {h}, {theta})"
        )));
    }
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::InvalidBox(format!(
            "dimensions must be positive, got w={w}, h={h}"
        )));
    }
    let (w, h, theta) = if w >= h {
        (w, h, theta)
    } else {
        (h, w, theta + FRAC_PI_2)
    };
    Ok(OrientedBox {
        cx,
        cy,
        w,
        h,
        theta: wrap_half_turn(theta),
    })
}

impl OrientedBox {
    /// Same as [`canonicalize`].
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        canonicalize(cx, cy, w, h, theta)
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    /// Longer side.
    pub fn w(&self) -> f64 {
        self.w
    }

    /// Shorter side.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Length of the longer side; the quantity used for scale bands and
    /// length bins.
    pub fn length(&self) -> f64 {
        self.w
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn aspect_ratio(&self) -> f64 {
        self.w / self.h
    }

    /// Unit vectors along the long (`w`) and short (`h`) axes.
    pub fn axes(&self) -> (Point, Point) {
        let (s, c) = self.theta.sin_cos();
        (Point::new(c, s), Point::new(-s, c))
    }

    /// Four corners, clockwise as seen on screen (y down), starting from the
    /// local corner `(-w/2, -h/2)`.
    pub fn corners(&self) -> [Point; 4] {
        let (s, c) = self.theta.sin_cos();
        let hw = self.w / 2.0;
        let hh = self.h / 2.0;
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]
            .map(|(dx, dy)| Point::new(self.cx + dx * c - dy * s, self.cy + dx * s + dy * c))
    }

    /// Fits a box to four corners given in the order produced by
    /// [`OrientedBox::corners`]. Opposite sides are averaged, so slightly
    /// non-rectangular annotation quads are accepted.
    pub fn from_corners(pts: &[Point; 4]) -> Result<Self> {
        let cx = pts.iter().map(|p| p.x).sum::<f64>() / 4.0;
        let cy = pts.iter().map(|p| p.y).sum::<f64>() / 4.0;
        let e01 = pts[1].sub(pts[0]);
        let e12 = pts[2].sub(pts[1]);
        let e32 = pts[2].sub(pts[3]);
        let e03 = pts[3].sub(pts[0]);
        let w = (e01.norm() + e32.norm()) / 2.0;
        let h = (e12.norm() + e03.norm()) / 2.0;
        let dir = Point::new(e01.x + e32.x, e01.y + e32.y);
        let theta = dir.y.atan2(dir.x);
        canonicalize(cx, cy, w, h, theta)
    }

    /// Tightest axis-aligned box around the corners.
    pub fn to_hbb(&self) -> AxisBox {
        let pts = self.corners();
        let (mut xmin, mut ymin) = (f64::INFINITY, f64::INFINITY);
        let (mut xmax, mut ymax) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in pts {
            xmin = xmin.min(p.x);
            ymin = ymin.min(p.y);
            xmax = xmax.max(p.x);
            ymax = ymax.max(p.y);
        }
        AxisBox {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    /// Half extents of the axis-aligned bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        (hw * c.abs() + hh * s.abs(), hw * s.abs() + hh * c.abs())
    }

    /// Whether `p` lies inside or on the boundary.
    pub fn contains(&self, p: Point) -> bool {
        let (u, v) = self.axes();
        let d = p.sub(self.center());
        let a = d.x * u.x + d.y * u.y;
        let b = d.x * v.x + d.y * v.y;
        a.abs() <= self.w / 2.0 && b.abs() <= self.h / 2.0
    }

    /// Multiplies center and sides by `factor`; the angle is unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        OrientedBox {
            cx: self.cx * factor,
            cy: self.cy * factor,
            w: self.w * factor,
            h: self.h * factor,
            theta: self.theta,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        OrientedBox {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    /// Rotates the box by `angle` about `pivot`.
    pub fn rotated_about(&self, pivot: Point, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let d = self.center().sub(pivot);
        OrientedBox {
            cx: pivot.x + d.x * c - d.y * s,
            cy: pivot.y + d.x * s + d.y * c,
            w: self.w,
            h: self.h,
            theta: wrap_half_turn(self.theta + angle),
        }
    }

    fn key_cmp(&self, o: &Self) -> Ordering {
        self.cx
            .total_cmp(&o.cx)
            .then(self.cy.total_cmp(&o.cy))
            .then(self.w.total_cmp(&o.w))
            .then(self.h.total_cmp(&o.h))
            .then(self.theta.total_cmp(&o.theta))
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl AxisBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        if !(xmax > xmin && ymax > ymin) {
            return Err(Error::InvalidBox(format!(
                "axis box needs xmax > xmin and ymax > ymin, got ({xmin}, {ymin}, {xmax}, {ymax})"
            )));
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }
}

pub fn obb_to_hbb(b: &OrientedBox) -> AxisBox {
    b.to_hbb()
}

/// Standard shoelace signed area. Positive for the corner order returned by
/// [`OrientedBox::corners`].
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        acc += p.x * q.y - q.x * p.y;
    }
    acc / 2.0
}

/// Sutherland-Hodgman clipping of `subject` against the convex polygon
/// `clip`. Both polygons must have positive [`signed_area`].
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut out: Vec<Point> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let edge = b.sub(a);
        let side = |p: Point| edge.cross(p.sub(a));
        let input = std::mem::take(&mut out);
        let m = input.len();
        for k in 0..m {
            let cur = input[k];
            let prev = input[(k + m - 1) % m];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(intersect(prev, cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    out
}

fn intersect(p: Point, q: Point, sp: f64, sq: f64) -> Point {
    let t = sp / (sp - sq);
    Point::new(p.x + t * (q.x - p.x), p.y + t * (q.y - p.y))
}

/// Area of the intersection of two oriented boxes.
pub fn intersection_area(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (ra, rb) = (a.half_extents(), b.half_extents());
    if (a.cx - b.cx).abs() > ra.0 + rb.0 || (a.cy - b.cy).abs() > ra.1 + rb.1 {
        return 0.0;
    }
    let poly = clip_convex(&a.corners(), &b.corners());
    let area = signed_area(&poly);
    if area < AREA_EPS {
        0.0
    } else {
        area
    }
}

/// Intersection over union of two oriented boxes, in `[0, 1]`.
///
/// The arguments are put in a fixed order before clipping so the result is
/// bit-for-bit symmetric.
pub fn rotated_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let (a, b) = if a.key_cmp(b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let inter = intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Anything that carries a box and a confidence score.
pub trait Scored {
    fn obb(&self) -> &OrientedBox;
    fn score(&self) -> f64;
}

impl Scored for (OrientedBox, f64) {
    fn obb(&self) -> &OrientedBox {
        &self.0
    }

    fn score(&self) -> f64 {
        self.1
    }
}

impl<T: Scored> Scored for &T {
    fn obb(&self) -> &OrientedBox {
        (*self).obb()
    }

    fn score(&self) -> f64 {
        (*self).score()
    }
}

/// Indices of `items` sorted by descending score, ties by lower index.
pub fn score_order<T: Scored>(items: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&i, &j| {
        items[j]
            .score()
            .total_cmp(&items[i].score())
            .then(i.cmp(&j))
    });
    order
}

/// Greedy rotated non-maximum suppression.
///
/// Returns the indices of kept items in descending score order. A box is
/// suppressed when its IoU with an already kept box exceeds `iou_threshold`.
pub fn rotated_nms<T: Scored>(items: &[T], iou_threshold: f64) -> Vec<usize> {
    let order = score_order(items);
    let mut kept: Vec<usize> = Vec::new();
    let mut suppressed = vec![false; items.len()];
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(i);
        let bi = items[i].obb();
        for &j in &order[rank + 1..] {
            if !suppressed[j] && rotated_iou(bi, items[j].obb()) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}
