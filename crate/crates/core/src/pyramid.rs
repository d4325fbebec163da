//! Dynamic image pyramid planning and sliding-window tiling.
//!
//! Layer `m` (1-based, layer 1 is full resolution) is the original image
//! downsampled by `sigma^(m-1)`. Layers are added until either side of the
//! top layer fits inside the termination threshold, which doubles as the
//! sliding-window size.

use crate::error::{Error, Result};
use crate::geometry::{OrientedBox, Point};

pub const DEFAULT_SIGMA: f64 = 2.0;
pub const DEFAULT_WINDOW: u32 = 1024;
pub const DEFAULT_OVERLAP: u32 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSize {
    pub height: u32,
    pub width: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidPlan {
    pub height: u32,
    pub width: u32,
    pub sigma: f64,
    pub threshold_h: u32,
    pub threshold_w: u32,
    /// One entry per layer, index 0 is layer 1.
    pub layers: Vec<LayerSize>,
}

impl PyramidPlan {
    pub fn n(&self) -> usize {
        self.layers.len()
    }

    /// Layer-to-original multiplier `sigma^(layer-1)`.
    pub fn scale(&self, layer: usize) -> f64 {
        layer_scale(self.sigma, layer)
    }

    pub fn layer_size(&self, layer: usize) -> Option<LayerSize> {
        layer
            .checked_sub(1)
            .and_then(|i| self.layers.get(i))
            .copied()
    }

    fn check_layer(&self, layer: usize) -> Result<LayerSize> {
        self.layer_size(layer).ok_or_else(|| {
            Error::InvalidArgument(format!("layer {layer} outside 1..={}", self.n()))
        })
    }
}

pub fn layer_scale(sigma: f64, layer: usize) -> f64 {
    sigma.powi(layer as i32 - 1)
}

/// Smallest `n` such that `H / sigma^(n-1) <= H_t` or `W / sigma^(n-1) <= W_t`,
/// with per-layer sizes rounded to the nearest integer (at least 1).
pub fn plan_pyramid(
    height: u32,
    width: u32,
    sigma: f64,
    threshold_h: u32,
    threshold_w: u32,
) -> Result<PyramidPlan> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(
            "image size must be at least 1x1".into(),
        ));
    }
    if !(sigma.is_finite() && sigma > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must exceed 1, got {sigma}"
        )));
    }
    if threshold_h == 0 || threshold_w == 0 {
        return Err(Error::InvalidArgument(
            "termination threshold must be at least 1".into(),
        ));
    }
    let (h, w) = (f64::from(height), f64::from(width));
    let (th, tw) = (f64::from(threshold_h), f64::from(threshold_w));
    let mut layers = vec![LayerSize { height, width }];
    loop {
        let s = layer_scale(sigma, layers.len());
        if h / s <= th || w / s <= tw {
            break;
        }
        let next = layer_scale(sigma, layers.len() + 1);
        layers.push(LayerSize {
            height: round_dim(h / next),
            width: round_dim(w / next),
        });
    }
    Ok(PyramidPlan {
        height,
        width,
        sigma,
        threshold_h,
        threshold_w,
        layers,
    })
}

fn round_dim(v: f64) -> u32 {
    (v.round() as u32).max(1)
}

/// One sliding-window placement on one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileWindow {
    pub layer: usize,
    /// Row-major index within the layer.
    pub index: usize,
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
    /// Layer-to-original multiplier.
    pub scale: f64,
}

impl TileWindow {
    pub fn to_original(&self, p: Point) -> Point {
        window_to_original(self, p)
    }

    /// Maps an original-frame point into this window's frame.
    pub fn from_original(&self, p: Point) -> Point {
        Point::new(
            p.x / self.scale - f64::from(self.x0),
            p.y / self.scale - f64::from(self.y0),
        )
    }

    /// Whether a layer-frame point falls inside the closed window rectangle.
    pub fn contains_layer_point(&self, p: Point) -> bool {
        let (x0, y0) = (f64::from(self.x0), f64::from(self.y0));
        p.x >= x0
            && p.x <= x0 + f64::from(self.width)
            && p.y >= y0
            && p.y <= y0 + f64::from(self.height)
    }
}

/// Window origins along one axis. The last window is shifted back so it ends
/// exactly at the layer edge.
pub fn axis_origins(extent: u32, window: u32, overlap: u32) -> Vec<u32> {
    if extent <= window {
        return vec![0];
    }
    let stride = window - overlap;
    let mut out = Vec::new();
    let mut o = 0u32;
    loop {
        if o + window >= extent {
            out.push(extent - window);
            break;
        }
        out.push(o);
        o += stride;
    }
    out
}

/// Tiles layer `layer` with windows of the plan's threshold size.
pub fn tile_layer(plan: &PyramidPlan, layer: usize, overlap: u32) -> Result<Vec<TileWindow>> {
    let size = plan.check_layer(layer)?;
    if overlap >= plan.threshold_h.min(plan.threshold_w) {
        return Err(Error::InvalidArgument(format!(
            "overlap {overlap} must be smaller than the window ({}x{})",
            plan.threshold_w, plan.threshold_h
        )));
    }
    let xs = axis_origins(size.width, plan.threshold_w, overlap);
    let ys = axis_origins(size.height, plan.threshold_h, overlap);
    let width = plan.threshold_w.min(size.width);
    let height = plan.threshold_h.min(size.height);
    let scale = plan.scale(layer);
    let mut out = Vec::with_capacity(xs.len() * ys.len());
    for &y0 in &ys {
        for &x0 in &xs {
            out.push(TileWindow {
                layer,
                index: out.len(),
                x0,
                y0,
                width,
                height,
                scale,
            });
        }
    }
    Ok(out)
}

/// Windows for every layer of a plan; `layers[m - 1]` holds layer `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidTiling {
    pub plan: PyramidPlan,
    pub overlap: u32,
    pub layers: Vec<Vec<TileWindow>>,
}

impl PyramidTiling {
    pub fn new(plan: PyramidPlan, overlap: u32) -> Result<Self> {
        let layers = (1..=plan.n())
            .map(|m| tile_layer(&plan, m, overlap))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            plan,
            overlap,
            layers,
        })
    }

    pub fn window(&self, layer: usize, index: usize) -> Option<&TileWindow> {
        layer
            .checked_sub(1)
            .and_then(|l| self.layers.get(l))
            .and_then(|ws| ws.get(index))
    }

    pub fn window_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }
}

pub fn window_to_original(win: &TileWindow, p: Point) -> Point {
    Point::new(
        (f64::from(win.x0) + p.x) * win.scale,
        (f64::from(win.y0) + p.y) * win.scale,
    )
}

pub fn original_to_layer(plan: &PyramidPlan, layer: usize, p: Point) -> Point {
    let s = plan.scale(layer);
    Point::new(p.x / s, p.y / s)
}

pub fn layer_to_original(plan: &PyramidPlan, layer: usize, p: Point) -> Point {
    let s = plan.scale(layer);
    Point::new(p.x * s, p.y * s)
}

/// Expresses an original-frame box in layer `layer`'s frame.
pub fn project_box(b: &OrientedBox, plan: &PyramidPlan, layer: usize) -> OrientedBox {
    b.scaled(1.0 / plan.scale(layer))
}

pub fn unproject_box(b: &OrientedBox, plan: &PyramidPlan, layer: usize) -> OrientedBox {
    b.scaled(plan.scale(layer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plan_examples() {
        let p = plan_pyramid(16384, 16384, 2.0, 1024, 1024).unwrap();
        assert_eq!(p.n(), 5);
        let sides: Vec<u32> = p.layers.iter().map(|l| l.width).collect();
        assert_eq!(sides, vec![16384, 8192, 4096, 2048, 1024]);
        assert_eq!(plan_pyramid(2048, 2048, 2.0, 1024, 1024).unwrap().n(), 2);
        assert_eq!(plan_pyramid(1000, 1000, 2.0, 1024, 1024).unwrap().n(), 1);
    }

    #[test]
    fn plan_either_side_terminates() {
        // the short side already fits, so no downsampling
        let p = plan_pyramid(900, 20000, 2.0, 1024, 1024).unwrap();
        assert_eq!(p.n(), 1);
        assert_eq!(
            p.layers[0],
            LayerSize {
                height: 900,
                width: 20000
            }
        );
    }

    #[test]
    fn plan_rejects_bad_args() {
        assert!(plan_pyramid(0, 10, 2.0, 5, 5).is_err());
        assert!(plan_pyramid(10, 10, 1.0, 5, 5).is_err());
        assert!(plan_pyramid(10, 10, 2.0, 0, 5).is_err());
    }

    #[test]
    fn plan_rounds_to_nearest() {
        let p = plan_pyramid(3000, 3001, 2.0, 1024, 1024).unwrap();
        assert_eq!(p.n(), 3);
        assert_eq!(
            p.layers[1],
            LayerSize {
                height: 1500,
                width: 1501
            }
        );
        assert_eq!(
            p.layers[2],
            LayerSize {
                height: 750,
                width: 750
            }
        );
    }

    #[test]
    fn origins_examples() {
        assert_eq!(axis_origins(1024, 1024, 200), vec![0]);
        assert_eq!(axis_origins(2048, 1024, 200), vec![0, 824, 1024]);
        assert_eq!(axis_origins(2900, 1024, 200), vec![0, 824, 1648, 1876]);
        assert_eq!(axis_origins(500, 1024, 200), vec![0]);
    }

    #[test]
    fn tile_2048_gives_nine() {
        let plan = plan_pyramid(2048, 2048, 2.0, 1024, 1024).unwrap();
        let w = tile_layer(&plan, 1, 200).unwrap();
        assert_eq!(w.len(), 9);
        assert_eq!((w[1].x0, w[1].y0), (824, 0));
        assert_eq!((w[3].x0, w[3].y0), (0, 824));
        assert!(w.iter().enumerate().all(|(i, t)| t.index == i));
        let top = tile_layer(&plan, 2, 200).unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].scale, 2.0);
    }

    #[test]
    fn tile_small_layer_clamps_window() {
        let plan = plan_pyramid(600, 800, 2.0, 1024, 1024).unwrap();
        let w = tile_layer(&plan, 1, 200).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].width, w[0].height), (800, 600));
    }

    #[test]
    fn tile_rejects_bad_args() {
        let plan = plan_pyramid(2048, 2048, 2.0, 1024, 1024).unwrap();
        assert!(tile_layer(&plan, 0, 200).is_err());
        assert!(tile_layer(&plan, 3, 200).is_err());
        assert!(tile_layer(&plan, 1, 1024).is_err());
    }

    #[test]
    fn transform_examples() {
        let plan = plan_pyramid(16384, 16384, 2.0, 1024, 1024).unwrap();
        let w1 = TileWindow {
            layer: 1,
            index: 0,
            x0: 0,
            y0: 0,
            width: 1024,
            height: 1024,
            scale: 1.0,
        };
        assert_eq!(
            window_to_original(&w1, Point::new(3.5, 7.25)),
            Point::new(3.5, 7.25)
        );
        let w3 = TileWindow {
            layer: 3,
            index: 0,
            x0: 100,
            y0: 50,
            width: 1024,
            height: 1024,
            scale: plan.scale(3),
        };
        assert_eq!(
            window_to_original(&w3, Point::new(10.0, 10.0)),
            Point::new(440.0, 240.0)
        );
    }

    #[test]
    fn project_examples() {
        let plan = plan_pyramid(4096, 4096, 2.0, 1024, 1024).unwrap();
        let b = OrientedBox::new(800.0, 800.0, 400.0, 40.0, 0.2).unwrap();
        assert_eq!(project_box(&b, &plan, 1), b);
        let p = project_box(&b, &plan, 3);
        assert_eq!(
            (p.cx(), p.cy(), p.w(), p.h(), p.theta()),
            (200.0, 200.0, 100.0, 10.0, 0.2)
        );
        assert_eq!(unproject_box(&p, &plan, 3), b);
    }

    fn brute_force_layers(h: f64, w: f64, sigma: f64, th: f64, tw: f64) -> usize {
        (1..)
            .find(|&n| {
                let d = sigma.powf((n - 1) as f64);
                h / d <= th || w / d <= tw
            })
            .unwrap()
    }

    proptest! {
        #[test]
        fn plan_is_minimal(
            h in 256u32..=32768, w in 256u32..=32768,
            sigma in 1.2001f64..=4.0,
            th in 256u32..=2048, tw in 256u32..=2048,
        ) {
            let p = plan_pyramid(h, w, sigma, th, tw).unwrap();
            prop_assert_eq!(p.n(), brute_force_layers(h.into(), w.into(), sigma, th.into(), tw.into()));
            prop_assert_eq!(p.layers[0], LayerSize { height: h, width: w });
        }

        #[test]
        fn tiling_covers_layer(extent in 1u32..6000, window in 64u32..1500, frac in 0.0f64..0.9) {
            let overlap = ((f64::from(window) * frac) as u32).min(window - 1);
            let origins = axis_origins(extent, window, overlap);
            let win = window.min(extent);
            prop_assert_eq!(origins[0], 0);
            prop_assert_eq!(origins.last().unwrap() + win, extent);
            for pair in origins.windows(2) {
                prop_assert!(pair[0] < pair[1]);
                // consecutive windows leave no gap
                prop_assert!(pair[1] <= pair[0] + win);
            }
        }

        #[test]
        fn transforms_invert(
            x0 in 0u32..10000, y0 in 0u32..10000, layer in 1usize..6,
            px in -2000.0f64..2000.0, py in -2000.0f64..2000.0,
        ) {
            let win = TileWindow { layer, index: 0, x0, y0, width: 1024, height: 1024, scale: layer_scale(2.0, layer) };
            let p = Point::new(px, py);
            let q = win.from_original(win.to_original(p));
            prop_assert!((q.x - p.x).abs() < 1e-9 && (q.y - p.y).abs() < 1e-9);
        }
    }
}
