//! Inter-layer feature fusion on synthetic feature tensors.
//!
//! `P(i, j)` is FPN level `i` computed on pyramid layer `j`. When the FPN
//! level ratio equals the pyramid ratio `sigma`, the triple
//! `{P(i+1, j-1), P(i, j), P(i-1, j+1)}` shares one effective stride
//! (original-image pixels per cell). Fusion mosaics each member into the
//! grid of the middle member, concatenates channels, applies a 1x1 linear
//! mix and a sigmoid. Features that cannot form a triple pass through
//! unchanged.
//!
//! Every [`FeatureMap`] records the original-image position of its cell
//! `(0, 0)` and its cell size, so placing one map inside another's grid is
//! an exact integer offset whenever tile origins sit on the cell lattice.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::pyramid::{PyramidTiling, TileWindow};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub layer: usize,
    pub level: u32,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Original-image pixels per cell.
    pub ratio: f64,
    /// Original-image position of the top-left corner of cell `(0, 0)`.
    pub origin: Point,
    data: Vec<f64>,
}

pub fn effective_ratio(sigma: f64, fpn_ratio: f64, layer: usize, level: u32) -> f64 {
    sigma.powi(layer as i32 - 1) * fpn_ratio.powi(level as i32)
}

impl FeatureMap {
    #[allow(clippy::too_many_arguments)]
    pub fn zeros(
        layer: usize,
        level: u32,
        channels: usize,
        height: usize,
        width: usize,
        ratio: f64,
        origin: Point,
    ) -> Self {
        Self {
            layer,
            level,
            channels,
            height,
            width,
            ratio,
            origin,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Feature grid produced for one sliding window at FPN level `level`.
    pub fn for_window(win: &TileWindow, level: u32, fpn_ratio: f64, channels: usize) -> Self {
        let stride = fpn_ratio.powi(level as i32);
        let height = (f64::from(win.height) / stride).ceil() as usize;
        let width = (f64::from(win.width) / stride).ceil() as usize;
        let origin = win.to_original(Point::new(0.0, 0.0));
        Self::zeros(
            win.layer,
            level,
            channels,
            height,
            width,
            stride * win.scale,
            origin,
        )
    }

    /// Fills every value from `f(channel, cell_center_in_original_pixels)`.
    pub fn fill_with(&mut self, mut f: impl FnMut(usize, Point) -> f64) {
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    let p = self.cell_center(y, x);
                    let i = self.idx(c, y, x);
                    self.data[i] = f(c, p);
                }
            }
        }
    }

    pub fn cell_center(&self, y: usize, x: usize) -> Point {
        Point::new(
            self.origin.x + (x as f64 + 0.5) * self.ratio,
            self.origin.y + (y as f64 + 0.5) * self.ratio,
        )
    }

    /// Cell containing an original-image point, if inside the grid.
    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.ratio).floor();
        let fy = ((p.y - self.origin.y) / self.ratio).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fy as usize, fx as usize))
    }

    fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, o: &FeatureMap) -> bool {
        self.channels == o.channels && self.height == o.height && self.width == o.width
    }
}

/// Average pooling with a square `factor x factor` kernel and equal stride.
/// Partial blocks at the border average over the cells they contain.
pub fn avg_pool(map: &FeatureMap, factor: usize) -> FeatureMap {
    if factor <= 1 {
        return map.clone();
    }
    let h = map.height.div_ceil(factor);
    let w = map.width.div_ceil(factor);
    let mut out = FeatureMap::zeros(
        map.layer,
        map.level,
        map.channels,
        h,
        w,
        map.ratio * factor as f64,
        map.origin,
    );
    for c in 0..map.channels {
        for y in 0..h {
            for x in 0..w {
                let (mut acc, mut n) = (0.0, 0usize);
                for yy in y * factor..((y + 1) * factor).min(map.height) {
                    for xx in x * factor..((x + 1) * factor).min(map.width) {
                        acc += map.get(c, yy, xx);
                        n += 1;
                    }
                }
                out.set(c, y, x, acc / n as f64);
            }
        }
    }
    out
}

/// FPN outputs of one pyramid layer: per level, one map per window tile.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerFeatures {
    pub layer: usize,
    pub levels: BTreeMap<u32, Vec<FeatureMap>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DipFeatures {
    pub sigma: f64,
    pub fpn_ratio: f64,
    /// `layers[j - 1]` holds layer `j`.
    pub layers: Vec<LayerFeatures>,
}

impl DipFeatures {
    pub fn tiles(&self, layer: usize, level: u32) -> Option<&[FeatureMap]> {
        layer
            .checked_sub(1)
            .and_then(|l| self.layers.get(l))
            .and_then(|lf| lf.levels.get(&level))
            .map(Vec::as_slice)
    }

    /// Synthetic pyramid: every layer of `tiling` gets one map per window at
    /// each level in `levels`, filled by `f(layer, level, channel, point)`.
    pub fn synthetic(
        tiling: &PyramidTiling,
        fpn_ratio: f64,
        levels: std::ops::RangeInclusive<u32>,
        channels: usize,
        f: impl Fn(usize, u32, usize, Point) -> f64,
    ) -> Self {
        let layers = tiling
            .layers
            .iter()
            .enumerate()
            .map(|(l, wins)| {
                let layer = l + 1;
                let levels = levels
                    .clone()
                    .map(|level| {
                        let maps = wins
                            .iter()
                            .map(|w| {
                                let mut m = FeatureMap::for_window(w, level, fpn_ratio, channels);
                                m.fill_with(|c, p| f(layer, level, c, p));
                                m
                            })
                            .collect();
                        (level, maps)
                    })
                    .collect();
                LayerFeatures { layer, levels }
            })
            .collect();
        Self {
            sigma: tiling.plan.sigma,
            fpn_ratio,
            layers,
        }
    }
}

/// Rectangle of cells `[row0, row0 + rows) x [col0, col0 + cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellRect {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
}

/// The grid every member of a candidate set is aligned to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame {
    pub origin: Point,
    pub ratio: f64,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// Pyramid layer `j` of the middle member.
    pub layer: usize,
    /// FPN level `i` of the middle member.
    pub level: u32,
    pub frame: GridFrame,
    /// Where each upper tile lands in the frame, in tile order.
    pub upper_placements: Vec<CellRect>,
    /// Pooling factor taking the upper mosaic to the frame's cell size.
    pub upper_downsample: usize,
    /// Region of the frame covered by the lower member.
    pub lower_crop: CellRect,
}

impl CandidateSet {
    pub fn upper(&self) -> (usize, u32) {
        (self.layer - 1, self.level + 1)
    }

    pub fn mid(&self) -> (usize, u32) {
        (self.layer, self.level)
    }

    pub fn lower(&self) -> (usize, u32) {
        (self.layer + 1, self.level - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Selection {
    pub sets: Vec<CandidateSet>,
    /// `(layer, level)` pairs left untouched by fusion.
    pub pass_through: Vec<(usize, u32)>,
}

fn frame_of(tiles: &[FeatureMap]) -> Result<GridFrame> {
    let first = tiles
        .first()
        .ok_or_else(|| Error::Shape("feature level has no tiles".into()))?;
    let ratio = first.ratio;
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for t in tiles {
        if (t.ratio - ratio).abs() > 1e-9 * ratio {
            return Err(Error::Shape(
                "tiles of one level disagree on cell size".into(),
            ));
        }
        x0 = x0.min(t.origin.x);
        y0 = y0.min(t.origin.y);
        x1 = x1.max(t.origin.x + t.width as f64 * ratio);
        y1 = y1.max(t.origin.y + t.height as f64 * ratio);
    }
    Ok(GridFrame {
        origin: Point::new(x0, y0),
        ratio,
        height: ((y1 - y0) / ratio).round() as usize,
        width: ((x1 - x0) / ratio).round() as usize,
    })
}

fn integral(v: f64, what: &str) -> Result<i64> {
    let r = v.round();
    if (v - r).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "{what} offset {v} is not on the feature cell lattice"
        )));
    }
    Ok(r as i64)
}

/// Signed cell offset of `tile` within a frame whose cells are `cell` wide.
fn offset_in(frame_origin: Point, cell: f64, tile: &FeatureMap) -> Result<(i64, i64)> {
    let dy = integral((tile.origin.y - frame_origin.y) / cell, "tile row")?;
    let dx = integral((tile.origin.x - frame_origin.x) / cell, "tile column")?;
    Ok((dy, dx))
}

fn clipped(dy: i64, dx: i64, rows: usize, cols: usize, fh: usize, fw: usize) -> CellRect {
    let r0 = dy.clamp(0, fh as i64);
    let c0 = dx.clamp(0, fw as i64);
    let r1 = (dy + rows as i64).clamp(0, fh as i64);
    let c1 = (dx + cols as i64).clamp(0, fw as i64);
    CellRect {
        row0: r0 as usize,
        col0: c0 as usize,
        rows: (r1 - r0) as usize,
        cols: (c1 - c0) as usize,
    }
}

fn pool_factor(frame_ratio: f64, tile_ratio: f64) -> Result<usize> {
    let f = frame_ratio / tile_ratio;
    let r = f.round();
    if r < 1.0 || (f - r).abs() > 1e-9 * f {
        return Err(Error::Config(format!(
            "cell size {tile_ratio} does not divide the target cell size {frame_ratio}"
        )));
    }
    Ok(r as usize)
}

/// Enumerates candidate triples across adjacent pyramid layers.
pub fn select_candidates(dip: &DipFeatures) -> Result<Selection> {
    if (dip.sigma - dip.fpn_ratio).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "FPN level ratio {} must equal the pyramid ratio {}",
            dip.fpn_ratio, dip.sigma
        )));
    }
    let n = dip.layers.len();
    let mut sel = Selection::default();
    for (l, lf) in dip.layers.iter().enumerate() {
        let j = l + 1;
        for (&i, mid_tiles) in &lf.levels {
            let upper = if j > 1 { dip.tiles(j - 1, i + 1) } else { None };
            let lower = match i.checked_sub(1) {
                Some(below) if j < n => dip.tiles(j + 1, below),
                _ => None,
            };
            let (Some(upper), Some(lower)) = (upper, lower) else {
                sel.pass_through.push((j, i));
                continue;
            };
            let frame = frame_of(mid_tiles)?;
            let upper_downsample = pool_factor(frame.ratio, upper[0].ratio)?;
            let fine = frame.ratio / upper_downsample as f64;
            let upper_placements = upper
                .iter()
                .map(|t| {
                    let (dy, dx) = offset_in(frame.origin, fine, t)?;
                    let f = upper_downsample as i64;
                    Ok(clipped(
                        dy.div_euclid(f),
                        dx.div_euclid(f),
                        t.height.div_ceil(upper_downsample),
                        t.width.div_ceil(upper_downsample),
                        frame.height,
                        frame.width,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let lower_frame = frame_of(lower)?;
            if pool_factor(frame.ratio, lower_frame.ratio)? != 1 {
                return Err(Error::Config(format!(
                    "lower member of layer {j} level {i} has cell size {}, expected {}",
                    lower_frame.ratio, frame.ratio
                )));
            }
            let dy = integral(
                (lower_frame.origin.y - frame.origin.y) / frame.ratio,
                "lower row",
            )?;
            let dx = integral(
                (lower_frame.origin.x - frame.origin.x) / frame.ratio,
                "lower column",
            )?;
            let lower_crop = clipped(
                dy,
                dx,
                lower_frame.height,
                lower_frame.width,
                frame.height,
                frame.width,
            );
            sel.sets.push(CandidateSet {
                layer: j,
                level: i,
                frame,
                upper_placements,
                upper_downsample,
                lower_crop,
            });
        }
    }
    Ok(sel)
}

/// Places tiles into a grid of `cell`-sized cells anchored at `origin`.
/// Overlapping cells are averaged; uncovered cells are zero; anything
/// outside the grid is cropped.
fn mosaic(
    tiles: &[FeatureMap],
    origin: Point,
    cell: f64,
    height: usize,
    width: usize,
) -> Result<FeatureMap> {
    let first = &tiles[0];
    let channels = first.channels;
    let mut sum = FeatureMap::zeros(
        first.layer,
        first.level,
        channels,
        height,
        width,
        cell,
        origin,
    );
    let mut count = vec![0u32; height * width];
    for t in tiles {
        if t.channels != channels {
            return Err(Error::Shape(
                "tiles of one level disagree on channel count".into(),
            ));
        }
        let (dy, dx) = offset_in(origin, cell, t)?;
        for y in 0..t.height {
            let fy = dy + y as i64;
            if fy < 0 || fy >= height as i64 {
                continue;
            }
            for x in 0..t.width {
                let fx = dx + x as i64;
                if fx < 0 || fx >= width as i64 {
                    continue;
                }
                let (fy, fx) = (fy as usize, fx as usize);
                count[fy * width + fx] += 1;
                for c in 0..channels {
                    let v = sum.get(c, fy, fx) + t.get(c, y, x);
                    sum.set(c, fy, fx, v);
                }
            }
        }
    }
    for c in 0..channels {
        for y in 0..height {
            for x in 0..width {
                let k = count[y * width + x];
                if k > 1 {
                    let v = sum.get(c, y, x) / f64::from(k);
                    sum.set(c, y, x, v);
                }
            }
        }
    }
    Ok(sum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedTriple {
    pub upper: FeatureMap,
    pub mid: FeatureMap,
    pub lower: FeatureMap,
}

/// Brings the three members of `set` onto the middle member's grid.
pub fn align(dip: &DipFeatures, set: &CandidateSet) -> Result<AlignedTriple> {
    let missing =
        |(l, i): (usize, u32)| Error::Shape(format!("no features for layer {l} level {i}"));
    let up_tiles = dip
        .tiles(set.upper().0, set.upper().1)
        .ok_or_else(|| missing(set.upper()))?;
    let mid_tiles = dip
        .tiles(set.layer, set.level)
        .ok_or_else(|| missing(set.mid()))?;
    let low_tiles = dip
        .tiles(set.lower().0, set.lower().1)
        .ok_or_else(|| missing(set.lower()))?;
    let fr = set.frame;
    let f = set.upper_downsample;

    let upper_fine = mosaic(
        up_tiles,
        fr.origin,
        fr.ratio / f as f64,
        fr.height * f,
        fr.width * f,
    )?;
    let mut upper = avg_pool(&upper_fine, f);
    let mut mid = mosaic(mid_tiles, fr.origin, fr.ratio, fr.height, fr.width)?;
    let mut lower = mosaic(low_tiles, fr.origin, fr.ratio, fr.height, fr.width)?;
    for (m, (layer, level)) in [
        (&mut upper, set.upper()),
        (&mut mid, set.mid()),
        (&mut lower, set.lower()),
    ] {
        m.layer = layer;
        m.level = level;
    }
    if !(upper.same_shape(&mid) && lower.same_shape(&mid)) {
        return Err(Error::Shape(format!(
            "aligned members disagree: upper {}x{}x{}, mid {}x{}x{}, lower {}x{}x{}",
            upper.channels,
            upper.height,
            upper.width,
            mid.channels,
            mid.height,
            mid.width,
            lower.channels,
            lower.height,
            lower.width
        )));
    }
    Ok(AlignedTriple { upper, mid, lower })
}

/// Row-major `out_channels x in_channels` matrix for the 1x1 mix.
#[derive(Debug, Clone, PartialEq)]
pub struct MixWeights {
    pub out_channels: usize,
    pub in_channels: usize,
    pub data: Vec<f64>,
}

impl MixWeights {
    pub fn new(out_channels: usize, in_channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != out_channels * in_channels {
            return Err(Error::Shape(format!(
                "mix weights need {out_channels}x{in_channels} = {} values, got {}",
                out_channels * in_channels,
                data.len()
            )));
        }
        Ok(Self {
            out_channels,
            in_channels,
            data,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            data: vec![0.0; out_channels * in_channels],
        }
    }

    pub fn get(&self, o: usize, k: usize) -> f64 {
        self.data[o * self.in_channels + k]
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Channel concatenation (upper, mid, lower), 1x1 mix, sigmoid.
pub fn fuse(triple: &AlignedTriple, weights: &MixWeights) -> Result<FeatureMap> {
    let AlignedTriple { upper, mid, lower } = triple;
    if !(upper.same_shape(mid) && lower.same_shape(mid)) {
        return Err(Error::Shape("aligned members must share one shape".into()));
    }
    let cin = 3 * mid.channels;
    if weights.in_channels != cin {
        return Err(Error::Shape(format!(
            "mix weights take {} input channels, concatenation has {cin}",
            weights.in_channels
        )));
    }
    let planes: Vec<&[f64]> = [upper, mid, lower]
        .iter()
        .flat_map(|m| (0..m.channels).map(move |c| m.plane(c)))
        .collect();
    let n = mid.height * mid.width;
    let mut out = FeatureMap::zeros(
        mid.layer,
        mid.level,
        weights.out_channels,
        mid.height,
        mid.width,
        mid.ratio,
        mid.origin,
    );
    for o in 0..weights.out_channels {
        let mut acc = vec![0.0; n];
        for (k, plane) in planes.iter().enumerate() {
            let wk = weights.get(o, k);
            if wk == 0.0 {
                continue;
            }
            for (a, v) in acc.iter_mut().zip(plane.iter()) {
                *a += wk * v;
            }
        }
        out.data[o * n..(o + 1) * n]
            .iter_mut()
            .zip(acc)
            .for_each(|(dst, z)| *dst = sigmoid(z));
    }
    Ok(out)
}

/// Fuses every candidate set of `dip`, reading only pre-fusion features.
/// Each fused map replaces the tiles of its middle member; everything else
/// is returned untouched.
pub fn fuse_pyramid(dip: &DipFeatures, weights: &MixWeights) -> Result<(DipFeatures, Selection)> {
    let sel = select_candidates(dip)?;
    let fused: Vec<FeatureMap> = sel
        .sets
        .par_iter()
        .map(|set| align(dip, set).and_then(|t| fuse(&t, weights)))
        .collect::<Result<_>>()?;
    let mut out = dip.clone();
    for (set, map) in sel.sets.iter().zip(fused) {
        out.layers[set.layer - 1]
            .levels
            .insert(set.level, vec![map]);
    }
    Ok((out, sel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pyramid::plan_pyramid;

    fn demo_tiling(size: u32, layers_hint: u32) -> PyramidTiling {
        let plan = plan_pyramid(size, size, 2.0, size / layers_hint, size / layers_hint).unwrap();
        PyramidTiling::new(plan, 64).unwrap()
    }

    #[test]
    fn three_layers_give_three_sets() {
        let t = demo_tiling(1024, 4);
        assert_eq!(t.plan.n(), 3);
        let dip = DipFeatures::synthetic(&t, 2.0, 1..=5, 2, |_, _, _, _| 1.0);
        let sel = select_candidates(&dip).unwrap();
        let got: Vec<(usize, u32)> = sel.sets.iter().map(|s| (s.layer, s.level)).collect();
        assert_eq!(got, vec![(2, 2), (2, 3), (2, 4)]);
        assert_eq!(sel.pass_through.len(), 15 - 3);
        for s in &sel.sets {
            assert_eq!(s.upper_downsample, 1);
            assert_eq!(
                s.lower_crop,
                CellRect {
                    row0: 0,
                    col0: 0,
                    rows: s.frame.height,
                    cols: s.frame.width
                }
            );
        }
    }

    #[test]
    fn single_and_two_layer_pyramids_pass_through() {
        for (size, hint) in [(512u32, 1u32), (512, 2)] {
            let t = demo_tiling(size, hint);
            let dip = DipFeatures::synthetic(&t, 2.0, 1..=5, 1, |_, _, _, _| 0.0);
            let sel = select_candidates(&dip).unwrap();
            assert!(sel.sets.is_empty());
            assert_eq!(sel.pass_through.len(), 5 * t.plan.n());
        }
    }

    #[test]
    fn ratio_mismatch_is_config_error() {
        let t = demo_tiling(1024, 4);
        let dip = DipFeatures::synthetic(&t, 3.0, 1..=3, 1, |_, _, _, _| 0.0);
        assert!(matches!(select_candidates(&dip), Err(Error::Config(_))));
    }

    #[test]
    fn constants_stay_constant() {
        let t = demo_tiling(1024, 4);
        let dip =
            DipFeatures::synthetic(&t, 2.0, 1..=5, 2, |l, _, c, _| l as f64 + c as f64 * 10.0);
        let sel = select_candidates(&dip).unwrap();
        for s in &sel.sets {
            let a = align(&dip, s).unwrap();
            for (m, base) in [(&a.upper, 1.0), (&a.mid, 2.0), (&a.lower, 3.0)] {
                for c in 0..2 {
                    assert!(m.plane(c).iter().all(|&v| v == base + c as f64 * 10.0));
                }
            }
        }
    }

    #[test]
    fn single_window_mosaic_is_identity() {
        let plan = plan_pyramid(256, 256, 2.0, 256, 256).unwrap();
        let t = PyramidTiling::new(plan, 64).unwrap();
        let dip = DipFeatures::synthetic(&t, 2.0, 2..=2, 1, |_, _, _, p| p.x * 3.0 + p.y);
        let tiles = dip.tiles(1, 2).unwrap();
        let fr = frame_of(tiles).unwrap();
        let m = mosaic(tiles, fr.origin, fr.ratio, fr.height, fr.width).unwrap();
        assert_eq!(m.values(), tiles[0].values());
    }

    #[test]
    fn pool_averages_blocks() {
        let mut m = FeatureMap::zeros(1, 0, 1, 3, 4, 1.0, Point::new(0.0, 0.0));
        for y in 0..3 {
            for x in 0..4 {
                m.set(0, y, x, (y * 4 + x) as f64);
            }
        }
        let p = avg_pool(&m, 2);
        assert_eq!((p.height, p.width, p.ratio), (2, 2, 2.0));
        assert_eq!(p.get(0, 0, 0), (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
        assert_eq!(p.get(0, 1, 1), (10.0 + 11.0) / 2.0);
    }

    #[test]
    fn fuse_special_weights() {
        let t = demo_tiling(1024, 4);
        let dip = DipFeatures::synthetic(&t, 2.0, 1..=5, 2, |l, lv, c, p| {
            ((p.x * 0.01 + p.y * 0.02).sin() + l as f64 - lv as f64) * (c as f64 + 1.0)
        });
        let sel = select_candidates(&dip).unwrap();
        let a = align(&dip, &sel.sets[0]).unwrap();
        let zero = fuse(&a, &MixWeights::zeros(2, 6)).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.5));
        let mut sel_mid = MixWeights::zeros(2, 6);
        sel_mid.data[2] = 1.0;
        sel_mid.data[6 + 3] = 1.0;
        let out = fuse(&a, &sel_mid).unwrap();
        for (o, m) in out.values().iter().zip(a.mid.values()) {
            assert_eq!(*o, sigmoid(*m));
        }
        assert!(fuse(&a, &MixWeights::zeros(2, 5)).is_err());
        assert!(MixWeights::new(2, 6, vec![0.0; 11]).is_err());
    }

    #[test]
    fn fuse_pyramid_replaces_only_candidates() {
        let t = demo_tiling(1024, 4);
        let dip = DipFeatures::synthetic(&t, 2.0, 1..=5, 1, |_, _, _, p| p.x);
        let (out, sel) = fuse_pyramid(&dip, &MixWeights::zeros(1, 3)).unwrap();
        for &(l, i) in &sel.pass_through {
            assert_eq!(out.tiles(l, i), dip.tiles(l, i));
        }
        for s in &sel.sets {
            let fused = out.tiles(s.layer, s.level).unwrap();
            assert_eq!(fused.len(), 1);
            assert!(fused[0].values().iter().all(|&v| v == 0.5));
        }
    }
}
