//! Focal and Smooth L1 losses and the per-layer loss assembly.

use crate::error::{Error, Result};

pub const DEFAULT_FOCAL_ALPHA: f64 = 0.25;
pub const DEFAULT_FOCAL_GAMMA: f64 = 2.0;

/// `-alpha * (1 - p_t)^gamma * ln(p_t)` with `p_t = p` for positives and
/// `1 - p` otherwise.
pub fn focal_loss(p: f64, is_positive: bool, alpha: f64, gamma: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "focal loss probability must lie in (0, 1), got {p}"
        )));
    }
    let pt = if is_positive { p } else { 1.0 - p };
    Ok(-alpha * (1.0 - pt).powf(gamma) * pt.ln())
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// One sample of a layer. Positives carry a regression loss and its weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub cls_loss: f64,
    pub regression: Option<Regression>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regression {
    pub loss: f64,
    pub weight: f64,
}

impl Sample {
    pub fn negative(cls_loss: f64) -> Self {
        Self {
            cls_loss,
            regression: None,
        }
    }

    pub fn positive(cls_loss: f64, reg_loss: f64, weight: f64) -> Self {
        Self {
            cls_loss,
            regression: Some(Regression {
                loss: reg_loss,
                weight,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSamples {
    pub lambda: f64,
    pub samples: Vec<Sample>,
}

impl LayerSamples {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self {
            lambda: 1.0,
            samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerLoss {
    pub lambda: f64,
    pub n: usize,
    pub n_pos: usize,
    pub cls_sum: f64,
    pub reg_sum: f64,
}

impl LayerLoss {
    /// `cls_sum / N + reg_sum / N+`; an empty sum contributes zero.
    pub fn unweighted(&self) -> f64 {
        let cls = if self.n == 0 {
            0.0
        } else {
            self.cls_sum / self.n as f64
        };
        let reg = if self.n_pos == 0 {
            0.0
        } else {
            self.reg_sum / self.n_pos as f64
        };
        cls + reg
    }

    pub fn weighted(&self) -> f64 {
        self.lambda * self.unweighted()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub layers: Vec<LayerLoss>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn recomputed_total(&self) -> f64 {
        self.layers.iter().map(LayerLoss::weighted).sum()
    }
}

fn assemble(
    layers: &[LayerSamples],
    layer_count: usize,
    use_weights: bool,
) -> Result<LossBreakdown> {
    if layers.len() != layer_count {
        return Err(Error::InvalidArgument(format!(
            "got losses for {} layers, pyramid has {layer_count}",
            layers.len()
        )));
    }
    let per_layer: Vec<LayerLoss> = layers
        .iter()
        .map(|l| {
            let mut out = LayerLoss {
                lambda: l.lambda,
                n: l.samples.len(),
                n_pos: 0,
                cls_sum: 0.0,
                reg_sum: 0.0,
            };
            for s in &l.samples {
                out.cls_sum += s.cls_loss;
                if let Some(r) = s.regression {
                    out.n_pos += 1;
                    out.reg_sum += if use_weights {
                        r.weight * r.loss
                    } else {
                        r.loss
                    };
                }
            }
            out
        })
        .collect();
    let total = per_layer.iter().map(LayerLoss::weighted).sum();
    Ok(LossBreakdown {
        layers: per_layer,
        total,
    })
}

/// Oriented-task total: regression terms weighted by their sample weights.
pub fn total_loss_oriented(layers: &[LayerSamples], layer_count: usize) -> Result<LossBreakdown> {
    assemble(layers, layer_count, true)
}

/// Horizontal-task total: identical assembly with the sample weights ignored.
pub fn total_loss_horizontal(layers: &[LayerSamples], layer_count: usize) -> Result<LossBreakdown> {
    assemble(layers, layer_count, false)
}
