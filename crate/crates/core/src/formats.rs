//! Text file formats.
//!
//! * annotations: `x1 y1 x2 y2 x3 y3 x4 y4 <class> [<difficulty>]`, corners
//!   clockwise on screen. `imagesource:` / `gsd:` header lines, blank lines
//!   and `#` comments are skipped.
//! * detections: `class score cx cy w h theta layer window`, theta in radians.
//! * sample-weight input: `gt cx cy w h theta` lines, each followed by the
//!   `sample x y` lines of its positive samples.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! write-then-parse reproduces every value exactly.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::geometry::{OrientedBox, Point};
use crate::merge::{Detection, Frame};
use crate::ssrw::{GtSamples, SampleWeightRecord};

/// Whitespace-separated tokens of a line with their 1-based columns.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, &line[s..]));
    }
    out.into_iter()
        .map(|(s, t)| (line[..s].chars().count() + 1, t))
        .collect()
}

fn skip_line(line: &str) -> bool {
    let t = line.trim_start();
    t.is_empty() || t.starts_with('#') || t.starts_with("imagesource:") || t.starts_with("gsd:")
}

fn num<T: std::str::FromStr>(lineno: usize, (col, tok): (usize, &str), what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::parse(lineno, col, format!("expected {what}, found `{tok}`")))
}

fn finite(lineno: usize, t: (usize, &str), what: &str) -> Result<f64> {
    let v: f64 = num(lineno, t, what)?;
    if !v.is_finite() {
        return Err(Error::parse(lineno, t.0, format!("{what} must be finite")));
    }
    Ok(v)
}

fn end_column(line: &str) -> usize {
    line.chars().count() + 1
}

pub fn parse_annotations(text: &str) -> Result<Vec<GroundTruth>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if skip_line(line) {
            continue;
        }
        let toks = tokens(line);
        if toks.len() < 9 {
            let col = toks.get(toks.len().saturating_sub(1)).map_or(1, |t| t.0);
            let col = if toks.is_empty() {
                col
            } else {
                end_column(line)
            };
            return Err(Error::parse(
                lineno,
                col,
                format!(
                    "expected 8 coordinates and a class, found {} fields",
                    toks.len()
                ),
            ));
        }
        if toks.len() > 10 {
            return Err(Error::parse(
                lineno,
                toks[10].0,
                "unexpected trailing field",
            ));
        }
        let mut pts = [Point::default(); 4];
        for (k, p) in pts.iter_mut().enumerate() {
            p.x = finite(lineno, toks[2 * k], "x coordinate")?;
            p.y = finite(lineno, toks[2 * k + 1], "y coordinate")?;
        }
        let difficult = match toks.get(9) {
            None => false,
            Some(&t) => {
                let d: u8 = num(lineno, t, "difficulty 0 or 1")?;
                match d {
                    0 => false,
                    1 => true,
                    _ => return Err(Error::parse(lineno, t.0, "difficulty must be 0 or 1")),
                }
            }
        };
        let bbox = OrientedBox::from_corners(&pts)
            .map_err(|e| Error::parse(lineno, toks[0].0, e.to_string()))?;
        out.push(GroundTruth {
            class: toks[8].1.to_string(),
            bbox,
            difficult,
        });
    }
    Ok(out)
}

pub fn write_annotations(gts: &[GroundTruth]) -> String {
    let mut s = String::new();
    for g in gts {
        for p in g.bbox.corners() {
            let _ = write!(s, "{} {} ", p.x, p.y);
        }
        let _ = writeln!(s, "{} {}", g.class, u8::from(g.difficult));
    }
    s
}

/// Parses detections; boxes are taken to be in the original frame.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if skip_line(line) {
            continue;
        }
        let toks = tokens(line);
        if toks.len() != 9 {
            let col = if toks.len() > 9 {
                toks[9].0
            } else {
                end_column(line)
            };
            return Err(Error::parse(
                lineno,
                col,
                format!(
                    "expected 9 fields (class score cx cy w h theta layer window), found {}",
                    toks.len()
                ),
            ));
        }
        let score = finite(lineno, toks[1], "score")?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::parse(
                lineno,
                toks[1].0,
                format!("score {score} outside [0, 1]"),
            ));
        }
        let v: Vec<f64> = (2..7)
            .map(|k| finite(lineno, toks[k], "box parameter"))
            .collect::<Result<_>>()?;
        let bbox = OrientedBox::new(v[0], v[1], v[2], v[3], v[4])
            .map_err(|e| Error::parse(lineno, toks[4].0, e.to_string()))?;
        let layer: usize = num(lineno, toks[7], "layer index")?;
        if layer == 0 {
            return Err(Error::parse(lineno, toks[7].0, "layer indices start at 1"));
        }
        out.push(Detection {
            class: toks[0].1.to_string(),
            score,
            bbox,
            layer,
            window: num(lineno, toks[8], "window index")?,
            frame: Frame::Original,
        });
    }
    Ok(out)
}

pub fn write_detections(dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        let b = d.bbox;
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {} {}",
            d.class,
            d.score,
            b.cx(),
            b.cy(),
            b.w(),
            b.h(),
            b.theta(),
            d.layer,
            d.window
        );
    }
    s
}

pub fn parse_sample_file(text: &str) -> Result<Vec<GtSamples>> {
    let mut out: Vec<GtSamples> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if skip_line(line) {
            continue;
        }
        let toks = tokens(line);
        match toks[0].1 {
            "gt" => {
                if toks.len() != 6 {
                    return Err(Error::parse(
                        lineno,
                        end_column(line),
                        "expected `gt cx cy w h theta`",
                    ));
                }
                let v: Vec<f64> = (1..6)
                    .map(|k| finite(lineno, toks[k], "box parameter"))
                    .collect::<Result<_>>()?;
                let gt = OrientedBox::new(v[0], v[1], v[2], v[3], v[4])
                    .map_err(|e| Error::parse(lineno, toks[3].0, e.to_string()))?;
                out.push(GtSamples {
                    gt,
                    samples: Vec::new(),
                });
            }
            "sample" => {
                if toks.len() != 3 {
                    return Err(Error::parse(
                        lineno,
                        end_column(line),
                        "expected `sample x y`",
                    ));
                }
                let p = Point::new(finite(lineno, toks[1], "x")?, finite(lineno, toks[2], "y")?);
                out.last_mut()
                    .ok_or_else(|| Error::parse(lineno, 1, "sample before any `gt` line"))?
                    .samples
                    .push(p);
            }
            other => {
                return Err(Error::parse(
                    lineno,
                    1,
                    format!("unknown record `{other}`, expected `gt` or `sample`"),
                ));
            }
        }
    }
    Ok(out)
}

pub const SAMPLE_RECORD_HEADER: &str = "gt,x,y,delta_d,w_proj,h_proj,r_w,r_h,q_w,q_h,r,mu,w_reg";

pub fn write_sample_records(records: &[(usize, SampleWeightRecord)]) -> String {
    let mut s = String::from(SAMPLE_RECORD_HEADER);
    s.push('\n');
    for (gt, r) in records {
        let _ = writeln!(
            s,
            "{gt},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.sample.x,
            r.sample.y,
            r.delta_d,
            r.w_proj,
            r.h_proj,
            r.r_w,
            r.r_h,
            r.q_w,
            r.q_h,
            r.r,
            r.mu,
            r.w_reg
        );
    }
    s
}
