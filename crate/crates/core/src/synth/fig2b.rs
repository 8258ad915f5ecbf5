use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::toy::{build_training_set, group_spread, scene_anchors, train_on_set, SceneAnchors};
use super::{
    generate_scenes, FeatureConfig, LossVariant, Scene, SceneConfig, ToyHyperParams, ToyRegressor,
};
use crate::error::{Error, Result};
use crate::eval::{nms_sweep, EvalImage, SweepReport, MATCH_IOU};
use crate::geometry::{AnchorConfig, MatchConfig};

/// Miss-rate variances across NMS thresholds quoted for the full detectors
/// on the real benchmark; reported next to the synthetic result, never
/// compared against it.
pub const REFERENCE_VARIANCE_AGGLOSS: f64 = 0.095;
pub const REFERENCE_VARIANCE_BASELINE: f64 = 0.230;

pub fn default_thresholds() -> Vec<f64> {
    (3..=9).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub scene: SceneConfig,
    pub anchors: AnchorConfig,
    pub matching: MatchConfig,
    pub features: FeatureConfig,
    pub training: ToyHyperParams,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub thresholds: Vec<f64>,
    pub fppi_point: f64,
    /// Anchors scoring below this are not emitted as detections.
    pub min_score: f64,
    /// Detections kept per image before NMS.
    pub top_k: usize,
    pub seeds: Vec<u64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            anchors: AnchorConfig::default(),
            matching: MatchConfig::default(),
            features: FeatureConfig::default(),
            training: ToyHyperParams::default(),
            train_scenes: 60,
            test_scenes: 1000,
            thresholds: default_thresholds(),
            fppi_point: 1e-2,
            min_score: 0.05,
            top_k: 300,
            seeds: (1..=10).collect(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.anchors.validate()?;
        self.matching.validate()?;
        self.features.validate()?;
        self.training.validate()?;
        if self.train_scenes == 0 || self.test_scenes == 0 {
            return Err(Error::InvalidConfig(
                "bench: scene counts must be positive".into(),
            ));
        }
        if self.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidConfig(
                "bench: thresholds must lie in [0, 1]".into(),
            ));
        }
        let lo = self
            .thresholds
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .thresholds
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !(lo <= 0.3 + 1e-12 && hi >= 0.9 - 1e-12) {
            return Err(Error::InvalidConfig(
                "bench: thresholds must span at least [0.3, 0.9]".into(),
            ));
        }
        if !(self.fppi_point > 0.0) || !(0.0..1.0).contains(&self.min_score) || self.top_k == 0 {
            return Err(Error::InvalidConfig(
                "bench: fppi_point and top_k must be positive and min_score in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantReport {
    pub variant: LossVariant,
    pub sweep: SweepReport,
    /// Mean within-group spread of decoded member boxes on held-out scenes.
    pub spread: f64,
    pub final_loss: f64,
    pub com_evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reference {
    pub variance_aggloss: f64,
    pub variance_baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig2bReport {
    pub seed: u64,
    pub baseline: VariantReport,
    pub aggloss: VariantReport,
    /// `aggloss` variance over `baseline` variance; 1 when both are 0.
    pub variance_ratio: f64,
    /// `aggloss` spread over `baseline` spread.
    pub spread_ratio: f64,
    pub reference: Reference,
}

/// Held-out scenes with their anchors, shared by both variants.
struct TestBed {
    scenes: Vec<Scene>,
    anchors: Vec<SceneAnchors>,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

fn evaluate_variant(
    cfg: &BenchConfig,
    model: &ToyRegressor,
    bed: &TestBed,
) -> Result<VariantReport> {
    let per_scene = bed
        .scenes
        .par_iter()
        .zip(&bed.anchors)
        .map(|(scene, sa)| {
            let image = EvalImage {
                id: scene.id.clone(),
                gts: scene.objects.clone(),
                dets: model.detect(scene, sa, cfg.min_score, cfg.top_k)?,
            };
            Ok((image, group_spread(model, sa)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut images = Vec::with_capacity(per_scene.len());
    let (mut spread_sum, mut groups) = (0.0, 0usize);
    for (image, (s, n)) in per_scene {
        images.push(image);
        spread_sum += s;
        groups += n;
    }
    let sweep = nms_sweep(&images, &cfg.thresholds, cfg.fppi_point, MATCH_IOU)?;
    Ok(VariantReport {
        variant: model.variant,
        sweep,
        spread: if groups == 0 {
            0.0
        } else {
            spread_sum / groups as f64
        },
        final_loss: *model.loss_trace.last().unwrap_or(&f64::NAN),
        com_evaluations: model.com_evaluations,
    })
}

/// Trains `first` and `second` on identical seeded scenes and compares them
/// on identical held-out scenes.
pub fn compare_variants(
    cfg: &BenchConfig,
    seed: u64,
    first: LossVariant,
    second: LossVariant,
) -> Result<Fig2bReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_cfg = SceneConfig {
        seed: rng.random(),
        ..cfg.scene.clone()
    };
    let test_cfg = SceneConfig {
        seed: rng.random(),
        ..cfg.scene.clone()
    };
    let hp = ToyHyperParams {
        seed: rng.random(),
        ..cfg.training
    };
    let feature_seed: u64 = rng.random();

    let train = generate_scenes(&train_cfg, cfg.train_scenes, "train-")?;
    let set = build_training_set(&train, &cfg.anchors, &cfg.matching, &cfg.features, &hp)?;
    let model_a = train_on_set(&set, first, &hp)?;
    let model_b = train_on_set(&set, second, &hp)?;

    let scenes = generate_scenes(&test_cfg, cfg.test_scenes, "test-")?;
    let mut frng = ChaCha8Rng::seed_from_u64(feature_seed);
    let anchors = scenes
        .iter()
        .map(|s| scene_anchors(s, &cfg.anchors, &cfg.matching, &cfg.features, frng.random()))
        .collect::<Result<Vec<_>>>()?;
    let bed = TestBed { scenes, anchors };

    let baseline = evaluate_variant(cfg, &model_a, &bed)?;
    let aggloss = evaluate_variant(cfg, &model_b, &bed)?;
    Ok(Fig2bReport {
        seed,
        variance_ratio: ratio(aggloss.sweep.variance, baseline.sweep.variance),
        spread_ratio: ratio(aggloss.spread, baseline.spread),
        baseline,
        aggloss,
        reference: Reference {
            variance_aggloss: REFERENCE_VARIANCE_AGGLOSS,
            variance_baseline: REFERENCE_VARIANCE_BASELINE,
        },
    })
}

/// Baseline (`beta = 0`) against AggLoss (`beta = 1`) for one seed.
pub fn run_fig2b_experiment(cfg: &BenchConfig, seed: u64) -> Result<Fig2bReport> {
    compare_variants(cfg, seed, LossVariant::Baseline, LossVariant::AggLoss)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            train_scenes: 8,
            test_scenes: 20,
            training: ToyHyperParams {
                iterations: 40,
                ..ToyHyperParams::default()
            },
            ..BenchConfig::default()
        }
    }

    #[test]
    fn identical_variants_give_ratio_one() {
        let r =
            compare_variants(&small(), 3, LossVariant::Baseline, LossVariant::Baseline).unwrap();
        assert_eq!(r.baseline.sweep, r.aggloss.sweep);
        assert_eq!(r.variance_ratio, 1.0);
        assert_eq!(r.baseline.com_evaluations, 0);
    }

    #[test]
    fn report_is_deterministic() {
        let a = run_fig2b_experiment(&small(), 5).unwrap();
        let b = run_fig2b_experiment(&small(), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.aggloss.sweep.thresholds, default_thresholds());
        assert_eq!(a.reference.variance_baseline, 0.230);
    }

    #[test]
    fn thresholds_must_span_range() {
        let cfg = BenchConfig {
            thresholds: vec![0.5, 0.7],
            ..small()
        };
        assert!(run_fig2b_experiment(&cfg, 1).is_err());
    }
}
