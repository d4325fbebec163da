//! Pipeline configuration, stored as TOML.

use serde::{Deserialize, Serialize};

use crate::assignment::LayerThresholds;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::losses::{DEFAULT_FOCAL_ALPHA, DEFAULT_FOCAL_GAMMA};
use crate::merge::MergeMode;
use crate::pyramid::{DEFAULT_OVERLAP, DEFAULT_SIGMA, DEFAULT_WINDOW};
use crate::ssrw::DEFAULT_MU;
use crate::synth::{JitterSpec, SceneSpec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Downsampling factor between adjacent pyramid layers.
    pub sigma: f64,
    pub window_height: u32,
    pub window_width: u32,
    pub overlap: u32,
    pub thresholds: LayerThresholds,
    pub nms_iou: f64,
    pub scale_filter: bool,
    pub merge_mode: MergeMode,
    pub mu: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub eval: EvalConfig,
    pub scene: SceneSpec,
    pub jitter: JitterSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            sigma: DEFAULT_SIGMA,
            window_height: DEFAULT_WINDOW,
            window_width: DEFAULT_WINDOW,
            overlap: DEFAULT_OVERLAP,
            thresholds: LayerThresholds::default(),
            nms_iou: 0.5,
            scale_filter: true,
            merge_mode: MergeMode::Nms,
            mu: DEFAULT_MU,
            focal_alpha: DEFAULT_FOCAL_ALPHA,
            focal_gamma: DEFAULT_FOCAL_GAMMA,
            eval: EvalConfig::default(),
            scene: SceneSpec::default(),
            jitter: JitterSpec::default(),
        }
    }
}

fn bad(msg: String) -> Error {
    Error::Config(msg)
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > 1.0) {
            return Err(bad(format!("sigma must be > 1, got {}", self.sigma)));
        }
        if self.window_height == 0 || self.window_width == 0 {
            return Err(bad("window sides must be positive".into()));
        }
        if self.overlap >= self.window_height.min(self.window_width) {
            return Err(bad(format!(
                "overlap {} must be smaller than the window",
                self.overlap
            )));
        }
        let th = &self.thresholds;
        if !(th.min_base > 0.0 && th.growth >= 1.0 && th.max > th.min_base) {
            return Err(bad(format!(
                "thresholds need min_base > 0, growth >= 1 and max > min_base, got {th:?}"
            )));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(bad(format!(
                "nms_iou must lie in (0, 1], got {}",
                self.nms_iou
            )));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(bad(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return Err(bad(format!(
                "focal_alpha must lie in (0, 1), got {}",
                self.focal_alpha
            )));
        }
        if !(self.focal_gamma.is_finite() && self.focal_gamma >= 0.0) {
            return Err(bad(format!(
                "focal_gamma must be >= 0, got {}",
                self.focal_gamma
            )));
        }
        if self.eval.iou_sweep.is_empty()
            || self.eval.iou_sweep.iter().any(|t| !(*t > 0.0 && *t <= 1.0))
        {
            return Err(bad(
                "eval.iou_sweep must be a non-empty list in (0, 1]".into()
            ));
        }
        if !(self.eval.bin_iou > 0.0 && self.eval.bin_iou <= 1.0) {
            return Err(bad(format!(
                "eval.bin_iou must lie in (0, 1], got {}",
                self.eval.bin_iou
            )));
        }
        if !self.eval.bins.is_contiguous() {
            return Err(bad(
                "eval.bins must be contiguous and non-empty intervals".into()
            ));
        }
        self.jitter.validate().map_err(|e| bad(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = PipelineConfig::default();
        assert_eq!(c.sigma, 2.0);
        assert_eq!(
            (c.window_height, c.window_width, c.overlap),
            (1024, 1024, 200)
        );
        assert_eq!((c.thresholds.min_base, c.thresholds.max), (15.0, 1448.0));
        assert_eq!((c.focal_alpha, c.focal_gamma), (0.25, 2.0));
        assert_eq!(c.eval.iou_sweep.len(), 10);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let mut c = PipelineConfig {
            seed: 17,
            merge_mode: MergeMode::ExclusiveBands,
            ..PipelineConfig::default()
        };
        c.jitter.center_px = 0.5;
        let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert!(c.to_toml().contains("merge_mode = \"exclusive-bands\""));
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = PipelineConfig::from_toml("seed = 3\n[jitter]\nmiss_rate = 0.1\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.jitter.miss_rate, 0.1);
        assert_eq!(c.sigma, 2.0);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "schema_version = 2\n",
            "sigma = 1.0\n",
            "overlap = 1024\n",
            "nms_iou = 0.0\n",
            "mu = -1.0\n",
            "focal_alpha = 1.5\n",
            "unknown_key = 1\n",
            "[jitter]\nmiss_rate = 1.0\n",
        ] {
            assert!(
                matches!(PipelineConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }
}
