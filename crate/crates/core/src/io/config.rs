use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Mr2Config;
use crate::geometry::{AnchorConfig, MatchConfig};
use crate::loss::{LossConfig, OccReduction, NUM_PARTS};
use crate::poroi::{default_part_layout, OcclusionUnitConfig, PartLayout};
use crate::synth::{default_thresholds, BenchConfig};

/// Flat detector and evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Defaults {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub theta: f64,
    pub occ_reduction: OccReduction,

    pub pos_thresh: f64,
    pub neg_thresh: f64,
    pub anchor_stride: f64,
    pub anchor_scales: Vec<f64>,
    pub anchor_aspect_ratio: f64,
    pub densify_height: f64,
    pub densify_factor: usize,

    pub pooled_h: usize,
    pub pooled_w: usize,
    /// Feature cells per image pixel for feature files.
    pub spatial_scale: f64,
    pub part_layout: [[f64; 4]; NUM_PARTS],
    pub occ_hidden: [usize; 2],

    pub nms_thresh: f64,
    pub nms_thresholds: Vec<f64>,
    pub match_iou: f64,
    pub fppi_point: f64,
    pub mr2_points: usize,
    pub mr2_fppi_min: f64,
    pub mr2_fppi_max: f64,

    pub gradcheck_batches: usize,
    pub gradcheck_anchors: usize,
    pub gradcheck_step: f64,
    pub gradcheck_tolerance: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        let loss = LossConfig::default();
        let matching = MatchConfig::default();
        let anchors = AnchorConfig::default();
        let unit = OcclusionUnitConfig::default();
        let mr2 = Mr2Config::default();
        Self {
            alpha: loss.alpha,
            beta: loss.beta,
            lambda: loss.lambda,
            theta: loss.theta,
            occ_reduction: loss.occ_reduction,
            pos_thresh: matching.pos_thresh,
            neg_thresh: matching.neg_thresh,
            anchor_stride: anchors.stride,
            anchor_scales: anchors.scales,
            anchor_aspect_ratio: anchors.aspect_ratio,
            densify_height: anchors.densify_height,
            densify_factor: anchors.densify_factor,
            pooled_h: unit.pooled_h,
            pooled_w: unit.pooled_w,
            spatial_scale: 1.0 / 16.0,
            part_layout: default_part_layout().parts,
            occ_hidden: unit.hidden,
            nms_thresh: 0.5,
            nms_thresholds: default_thresholds(),
            match_iou: crate::eval::MATCH_IOU,
            fppi_point: 1e-2,
            mr2_points: mr2.points,
            mr2_fppi_min: mr2.fppi_min,
            mr2_fppi_max: mr2.fppi_max,
            gradcheck_batches: 20,
            gradcheck_anchors: 12,
            gradcheck_step: 1e-5,
            gradcheck_tolerance: 1e-4,
        }
    }
}

impl Defaults {
    pub fn loss(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            theta: self.theta,
            occ_reduction: self.occ_reduction,
        }
    }

    pub fn matching(&self) -> MatchConfig {
        MatchConfig {
            pos_thresh: self.pos_thresh,
            neg_thresh: self.neg_thresh,
        }
    }

    pub fn anchors(&self) -> AnchorConfig {
        AnchorConfig {
            stride: self.anchor_stride,
            scales: self.anchor_scales.clone(),
            aspect_ratio: self.anchor_aspect_ratio,
            densify_height: self.densify_height,
            densify_factor: self.densify_factor,
        }
    }

    pub fn layout(&self) -> PartLayout {
        PartLayout {
            parts: self.part_layout,
        }
    }

    pub fn occlusion_unit(&self, in_channels: usize) -> OcclusionUnitConfig {
        OcclusionUnitConfig {
            in_channels,
            hidden: self.occ_hidden,
            pooled_h: self.pooled_h,
            pooled_w: self.pooled_w,
        }
    }

    pub fn mr2(&self) -> Mr2Config {
        Mr2Config {
            points: self.mr2_points,
            fppi_min: self.mr2_fppi_min,
            fppi_max: self.mr2_fppi_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss().validate()?;
        self.matching().validate()?;
        self.anchors().validate()?;
        self.layout().validate()?;
        self.mr2().validate()?;
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("defaults: {msg}")));
        if self.pooled_h == 0 || self.pooled_w == 0 || self.occ_hidden.contains(&0) {
            return bad("pooled extent and occlusion-unit widths must be positive");
        }
        if !(self.spatial_scale > 0.0 && self.spatial_scale.is_finite()) {
            return bad("spatial_scale must be positive");
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.nms_thresh)
            || self.nms_thresholds.is_empty()
            || !self.nms_thresholds.iter().all(|t| unit(*t))
        {
            return bad("NMS thresholds must be a non-empty list in [0, 1]");
        }
        if !(self.match_iou > 0.0 && self.match_iou <= 1.0) || !(self.fppi_point > 0.0) {
            return bad("match_iou must lie in (0, 1] and fppi_point be positive");
        }
        if self.gradcheck_batches == 0
            || self.gradcheck_anchors == 0
            || !(self.gradcheck_step > 0.0)
            || !(self.gradcheck_tolerance > 0.0)
        {
            return bad("gradient check settings must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub defaults: Defaults,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.defaults.validate()?;
        self.bench.validate()
    }

    /// Parses and validates TOML; missing keys take their defaults.
    pub fn parse(text: &str, file: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| {
                1 + text[..s.start.min(text.len())].matches('\n').count()
            });
            Error::parse(file, line, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, Path::new("c.toml"))
    }

    #[test]
    fn empty_file_is_default() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!((cfg.defaults.pooled_h, cfg.defaults.pooled_w), (7, 7));
        assert_eq!(cfg.defaults.densify_height, 100.0);
        assert_eq!(cfg.defaults.loss(), LossConfig::default());
    }

    #[test]
    fn serialized_default_parses_back() {
        let cfg = RunConfig::default();
        assert_eq!(parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply() {
        let cfg = parse("[defaults]\nbeta = 0.0\noccol = 1\n");
        assert!(cfg.unwrap_err().to_string().contains("c.toml:3"));
        let cfg = parse(
            "[defaults]\nbeta = 0.0\n[bench]\ntest_scenes = 3\n[bench.training]\niterations = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.defaults.beta, 0.0);
        assert_eq!(cfg.bench.test_scenes, 3);
        assert_eq!(cfg.bench.training.iterations, 5);
    }

    #[test]
    fn unknown_keys_and_invalid_values_rejected() {
        assert!(parse("[defaults]\nalhpa = 1.0\n").is_err());
        assert!(parse("[other]\n").is_err());
        assert!(parse("[bench.scene]\nwdth = 3\n").is_err());
        assert!(parse("[defaults]\ntheta = 1.5\n").is_err());
        assert!(parse("[defaults]\npos_thresh = 0.2\n").is_err());
        assert!(parse(
            "[defaults]\npart_layout = [[0,0,1,1],[0,0,1,1],[0,0,1,1],[0,0,1,1],[0,0,1,1]]\n"
        )
        .is_err());
        assert!(parse("[defaults]\nmr2_points = 0\n").is_err());
    }
}
