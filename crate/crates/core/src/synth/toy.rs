use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Scene;
use crate::error::{Error, Result};
use crate::eval::ScoredBox;
use crate::geometry::{
    build_aggregation_groups, decode_box, encode_box, iou, match_anchors, AggregationGroups,
    AnchorConfig, AnchorLabel, BBox, EncodedDelta, MatchAssignment, MatchConfig,
};
use crate::loss::{rpn_loss_terms, LossBatch, LossConfig, PROB_EPS};

/// bias, blended evidence (4), best IoU, crowding ratio, crowding-scaled
/// evidence difference to the second-best pedestrian (4).
pub const NUM_FEATURES: usize = 11;
const OUTPUTS: usize = 5;
/// Encoded log-size deltas are clamped before decoding.
const MAX_LOG_SIZE: f64 = 4.0;
const MAX_EVIDENCE: f64 = 3.0;

/// How the surrogate backbone perceives an anchor.
///
/// An anchor overlapping two pedestrians sees a blend of both: its box
/// evidence is `(1 - c) t1 + c t2` with `c = contamination * u2 / (u1 + u2)`,
/// where `t1`, `t2` are the encoded offsets to the best and second-best
/// overlapping pedestrians and `u1`, `u2` their IoUs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub contamination: f64,
    /// Std of the noise on box evidence (encoded units).
    pub evidence_noise: f64,
    /// Std of the noise on the IoU and crowding signals.
    pub signal_noise: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            contamination: 0.8,
            evidence_noise: 0.03,
            signal_noise: 0.05,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.contamination)
            || !(self.evidence_noise >= 0.0)
            || !(self.signal_noise >= 0.0)
        {
            return Err(Error::InvalidConfig(
                "features: contamination must lie in [0, 1) and noise levels must be non-negative"
                    .into(),
            ));
        }
        Ok(())
    }
}

pub type Features = [f64; NUM_FEATURES];

pub fn anchor_features<R: Rng + ?Sized>(
    anchor: &BBox,
    gts: &[BBox],
    cfg: &FeatureConfig,
    rng: &mut R,
) -> Result<Features> {
    let ev =
        Normal::new(0.0, cfg.evidence_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let sig =
        Normal::new(0.0, cfg.signal_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut best: [(f64, Option<usize>); 2] = [(0.0, None), (0.0, None)];
    for (k, g) in gts.iter().enumerate() {
        let o = iou(anchor, g);
        if o > best[0].0 {
            best[1] = best[0];
            best[0] = (o, Some(k));
        } else if o > best[1].0 {
            best[1] = (o, Some(k));
        }
    }
    let noise4 = |rng: &mut R| [0; 4].map(|_| ev.sample(rng));
    let mut f = [0.0; NUM_FEATURES];
    f[0] = 1.0;
    let n = noise4(rng);
    let (u1, u2) = (best[0].0, best[1].0);
    match (best[0].1, best[1].1) {
        (None, _) => {
            f[1..5].copy_from_slice(&n);
            f[5] = sig.sample(rng);
        }
        (Some(k1), second) => {
            let t1 = encode_box(anchor, &gts[k1])?.to_array();
            let (t2, r) = match second {
                Some(k2) => (encode_box(anchor, &gts[k2])?.to_array(), u2 / (u1 + u2)),
                None => (t1, 0.0),
            };
            let c = cfg.contamination * r;
            let mut b = [0.0; 4];
            for d in 0..4 {
                b[d] = ((1.0 - c) * t1[d] + c * t2[d] + n[d]).clamp(-MAX_EVIDENCE, MAX_EVIDENCE);
            }
            f[1..5].copy_from_slice(&b);
            f[5] = u1 + sig.sample(rng);
            if second.is_some() {
                let r_obs = r + sig.sample(rng);
                let e2 = noise4(rng);
                f[6] = r_obs;
                for d in 0..4 {
                    let t2_obs = (t2[d] + e2[d]).clamp(-MAX_EVIDENCE, MAX_EVIDENCE);
                    f[7 + d] = r_obs * (b[d] - t2_obs);
                }
            }
        }
    }
    Ok(f)
}

/// Anchors of one scene with their features and ground-truth assignment.
#[derive(Debug, Clone)]
pub struct SceneAnchors {
    pub anchors: Vec<BBox>,
    pub features: Vec<Features>,
    pub assignment: MatchAssignment,
}

pub fn scene_anchors(
    scene: &Scene,
    anchor_cfg: &AnchorConfig,
    match_cfg: &MatchConfig,
    feat_cfg: &FeatureConfig,
    seed: u64,
) -> Result<SceneAnchors> {
    feat_cfg.validate()?;
    let anchors = anchor_cfg.build(scene.width, scene.height)?.anchors;
    let assignment = match_anchors(&anchors, &scene.objects, match_cfg)?;
    let gts: Vec<BBox> = scene
        .objects
        .iter()
        .filter(|g| !g.ignore)
        .map(|g| g.full)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = anchors
        .iter()
        .map(|a| anchor_features(a, &gts, feat_cfg, &mut rng))
        .collect::<Result<_>>()?;
    Ok(SceneAnchors {
        anchors,
        features,
        assignment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    /// Regression only (`beta = 0`).
    Baseline,
    /// Regression plus compactness (`beta = 1`).
    AggLoss,
}

impl LossVariant {
    pub fn beta(self) -> f64 {
        match self {
            LossVariant::Baseline => 0.0,
            LossVariant::AggLoss => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyHyperParams {
    pub learning_rate: f64,
    pub iterations: usize,
    /// Sampled negatives per positive anchor in each training scene.
    pub neg_per_pos: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for ToyHyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.3,
            iterations: 200,
            neg_per_pos: 3,
            alpha: 1.0,
            seed: 0,
        }
    }
}

impl ToyHyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || self.iterations == 0 {
            return Err(Error::InvalidConfig(
                "toy training needs a positive learning rate and iteration count".into(),
            ));
        }
        Ok(())
    }
}

/// Linear head mapping standardized anchor features to a pedestrian logit
/// and four encoded deltas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyRegressor {
    pub weights: [[f64; NUM_FEATURES]; OUTPUTS],
    /// Features are standardized as `(f - shift) / scale` with training-set
    /// statistics; the bias feature is left as is.
    pub feature_shift: Features,
    pub feature_scale: Features,
    pub variant: LossVariant,
    /// Total loss before every update, plus the final loss.
    pub loss_trace: Vec<f64>,
    /// Number of iterations that evaluated the compactness term.
    pub com_evaluations: usize,
}

fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

impl ToyRegressor {
    pub fn zeros(variant: LossVariant) -> Self {
        Self {
            weights: [[0.0; NUM_FEATURES]; OUTPUTS],
            feature_shift: [0.0; NUM_FEATURES],
            feature_scale: [1.0; NUM_FEATURES],
            variant,
            loss_trace: Vec::new(),
            com_evaluations: 0,
        }
    }

    fn standardize(&self, f: &Features) -> Features {
        std::array::from_fn(|k| (f[k] - self.feature_shift[k]) / self.feature_scale[k])
    }

    fn raw(&self, f: &Features) -> [f64; OUTPUTS] {
        self.raw_standardized(&self.standardize(f))
    }

    fn raw_standardized(&self, f: &Features) -> [f64; OUTPUTS] {
        self.weights
            .map(|row| row.iter().zip(f).map(|(w, x)| w * x).sum::<f64>())
    }

    /// Pedestrian probability and encoded deltas.
    pub fn predict(&self, f: &Features) -> (f64, EncodedDelta) {
        let o = self.raw(f);
        (sigmoid(o[0]), EncodedDelta::new(o[1], o[2], o[3], o[4]))
    }

    pub fn predict_box(&self, anchor: &BBox, f: &Features) -> Result<(f64, BBox)> {
        let (p, mut d) = self.predict(f);
        d.tw = d.tw.clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE);
        d.th = d.th.clamp(-MAX_LOG_SIZE, MAX_LOG_SIZE);
        Ok((p, decode_box(anchor, &d)?))
    }

    /// Decoded boxes of the `top_k` best anchors scoring at least
    /// `min_score`, clipped to the image, in descending score order.
    pub fn detect(
        &self,
        scene: &Scene,
        sa: &SceneAnchors,
        min_score: f64,
        top_k: usize,
    ) -> Result<Vec<ScoredBox>> {
        let mut out = Vec::new();
        for (a, f) in sa.anchors.iter().zip(&sa.features) {
            let (p, b) = self.predict_box(a, f)?;
            if p < min_score {
                continue;
            }
            let b = b.clamp_to(scene.width, scene.height);
            if b.area() > 0.0 {
                out.push(ScoredBox { bbox: b, score: p });
            }
        }
        // stable sort keeps anchor order among equal scores
        out.sort_by(|a, b| b.score.total_cmp(&a.score));
        out.truncate(top_k);
        Ok(out)
    }
}

/// Anchors sampled for training, concatenated over scenes.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub features: Vec<Features>,
    pub labels: Vec<bool>,
    pub targets: Vec<Option<EncodedDelta>>,
    pub groups: AggregationGroups,
}

/// Scene order is canonicalized (by content) before sampling, so the
/// result does not depend on the order scenes are passed in.
pub fn build_training_set(
    scenes: &[Scene],
    anchor_cfg: &AnchorConfig,
    match_cfg: &MatchConfig,
    feat_cfg: &FeatureConfig,
    hp: &ToyHyperParams,
) -> Result<TrainingSet> {
    if scenes.is_empty() {
        return Err(Error::InvalidConfig(
            "toy training needs at least one scene".into(),
        ));
    }
    let mut ordered: Vec<&Scene> = scenes.iter().collect();
    ordered.sort_by_key(|s| canonical_key(s));
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut set = TrainingSet {
        features: Vec::new(),
        labels: Vec::new(),
        targets: Vec::new(),
        groups: AggregationGroups::default(),
    };
    for scene in ordered {
        let sa = scene_anchors(scene, anchor_cfg, match_cfg, feat_cfg, rng.random())?;
        let positives: Vec<usize> = sa.assignment.positives().map(|(i, _)| i).collect();
        let negatives: Vec<usize> = sa
            .assignment
            .labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == AnchorLabel::Negative)
            .map(|(i, _)| i)
            .collect();
        let want = (hp.neg_per_pos * positives.len().max(1)).min(negatives.len());
        let mut picked: Vec<usize> = sample(&mut rng, negatives.len(), want)
            .into_iter()
            .map(|k| negatives[k])
            .collect();
        picked.sort_unstable();

        let offset = set.labels.len();
        let mut local = vec![usize::MAX; sa.anchors.len()];
        for (k, &i) in positives.iter().chain(&picked).enumerate() {
            local[i] = k;
            set.features.push(sa.features[i]);
            set.labels.push(k < positives.len());
            set.targets.push(sa.assignment.targets[i]);
        }
        let mut groups = build_aggregation_groups(&sa.assignment);
        for g in &mut groups.groups {
            for m in &mut g.members {
                *m = local[*m];
            }
        }
        set.groups.groups.extend(groups.offset(offset).groups);
    }
    Ok(set)
}

fn canonical_key(s: &Scene) -> Vec<u64> {
    let mut key = vec![s.width.to_bits(), s.height.to_bits()];
    for g in &s.objects {
        key.extend(g.full.to_array().map(f64::to_bits));
        key.extend(g.visible.to_array().map(f64::to_bits));
        key.push(g.ignore as u64);
    }
    key
}

/// Full-batch gradient descent on the RPN loss with `beta` set by the variant.
pub fn train_on_set(
    set: &TrainingSet,
    variant: LossVariant,
    hp: &ToyHyperParams,
) -> Result<ToyRegressor> {
    hp.validate()?;
    let cfg = LossConfig {
        alpha: hp.alpha,
        beta: variant.beta(),
        ..LossConfig::default()
    };
    let mut model = ToyRegressor::zeros(variant);
    let n = set.features.len();
    if n == 0 {
        return Err(Error::InvalidConfig("toy training set is empty".into()));
    }
    // statistics of the positives, which are all the regression rows see
    let pos: Vec<&Features> = set
        .features
        .iter()
        .zip(&set.labels)
        .filter(|(_, l)| **l)
        .map(|(f, _)| f)
        .collect();
    let np = pos.len().max(1) as f64;
    for k in 1..NUM_FEATURES {
        let mean = pos.iter().map(|f| f[k]).sum::<f64>() / np;
        let var = pos.iter().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / np;
        if var > 1e-24 {
            model.feature_shift[k] = mean;
            model.feature_scale[k] = var.sqrt();
        }
    }
    let feats: Vec<Features> = set.features.iter().map(|f| model.standardize(f)).collect();
    let evaluate = |model: &ToyRegressor| -> Result<_> {
        let mut scores = Vec::with_capacity(n);
        let mut deltas = Vec::with_capacity(n);
        for f in &feats {
            let o = model.raw_standardized(f);
            scores.push(sigmoid(o[0]));
            deltas.push(EncodedDelta::new(o[1], o[2], o[3], o[4]));
        }
        let batch = LossBatch::new(
            scores,
            deltas,
            set.labels.clone(),
            set.targets.clone(),
            set.groups.clone(),
        )?;
        let (loss, terms) = rpn_loss_terms(&batch, &cfg)?;
        Ok((batch, loss, terms))
    };
    for it in 0..=hp.iterations {
        let (batch, loss, terms) = evaluate(&model)?;
        if terms.com.is_some() {
            model.com_evaluations += 1;
        }
        model.loss_trace.push(loss.value);
        if !loss.value.is_finite() || loss.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                trace: model.loss_trace,
            });
        }
        if it == hp.iterations {
            break;
        }
        let mut gw = [[0.0; NUM_FEATURES]; OUTPUTS];
        for (i, f) in feats.iter().enumerate() {
            let g = &loss.grad[i * OUTPUTS..(i + 1) * OUTPUTS];
            let p = batch.scores[i];
            // p is clamped at the extremes, where its gradient vanishes
            let dlogit = if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
                0.0
            } else {
                g[0] * p * (1.0 - p)
            };
            let outs = [dlogit, g[1], g[2], g[3], g[4]];
            for (row, go) in gw.iter_mut().zip(outs) {
                if go != 0.0 {
                    for (w, x) in row.iter_mut().zip(f) {
                        *w += go * x;
                    }
                }
            }
        }
        for (row, grow) in model.weights.iter_mut().zip(&gw) {
            for (w, g) in row.iter_mut().zip(grow) {
                *w -= hp.learning_rate * g;
            }
        }
        if model.weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                trace: model.loss_trace,
            });
        }
    }
    Ok(model)
}

pub fn train_toy_regressor(
    scenes: &[Scene],
    variant: LossVariant,
    anchor_cfg: &AnchorConfig,
    match_cfg: &MatchConfig,
    feat_cfg: &FeatureConfig,
    hp: &ToyHyperParams,
) -> Result<ToyRegressor> {
    let set = build_training_set(scenes, anchor_cfg, match_cfg, feat_cfg, hp)?;
    train_on_set(&set, variant, hp)
}

/// Mean over aggregation groups of the mean pairwise L2 distance between
/// the members' decoded boxes (corner coordinates, pixels).
pub fn group_spread(model: &ToyRegressor, sa: &SceneAnchors) -> Result<(f64, usize)> {
    let groups = build_aggregation_groups(&sa.assignment);
    let mut total = 0.0;
    for g in &groups.groups {
        let boxes = g
            .members
            .iter()
            .map(|&i| {
                model
                    .predict_box(&sa.anchors[i], &sa.features[i])
                    .map(|(_, b)| b.to_array())
            })
            .collect::<Result<Vec<_>>>()?;
        let (mut sum, mut pairs) = (0.0, 0usize);
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                sum += boxes[i]
                    .iter()
                    .zip(&boxes[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                pairs += 1;
            }
        }
        total += sum / pairs as f64;
    }
    Ok((total, groups.rho()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scenes, SceneConfig};

    fn scenes(n: usize, seed: u64) -> Vec<Scene> {
        generate_scenes(
            &SceneConfig {
                seed,
                ..SceneConfig::default()
            },
            n,
            "t",
        )
        .unwrap()
    }

    fn train(sc: &[Scene], v: LossVariant, hp: &ToyHyperParams) -> ToyRegressor {
        train_toy_regressor(
            sc,
            v,
            &AnchorConfig::default(),
            &MatchConfig::default(),
            &FeatureConfig::default(),
            hp,
        )
        .unwrap()
    }

    #[test]
    fn isolated_anchor_evidence_is_its_own_target() {
        let cfg = FeatureConfig {
            evidence_noise: 0.0,
            signal_noise: 0.0,
            ..FeatureConfig::default()
        };
        let gt = BBox::new(100.0, 100.0, 141.0, 200.0).unwrap();
        let a = BBox::new(104.0, 96.0, 145.0, 196.0).unwrap();
        let f = anchor_features(&a, &[gt], &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let t = encode_box(&a, &gt).unwrap().to_array();
        assert_eq!(&f[1..5], &t);
        assert_eq!(f[6], 0.0);
        assert_eq!(f[5], iou(&a, &gt));
    }

    #[test]
    fn small_step_loss_non_increasing_and_deterministic() {
        let sc = scenes(6, 3);
        let hp = ToyHyperParams {
            learning_rate: 0.1,
            iterations: 60,
            ..ToyHyperParams::default()
        };
        let m = train(&sc, LossVariant::AggLoss, &hp);
        for w in m.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", m.loss_trace);
        }
        assert_eq!(m, train(&sc, LossVariant::AggLoss, &hp));
    }

    #[test]
    fn baseline_never_evaluates_compactness() {
        let sc = scenes(3, 4);
        let hp = ToyHyperParams {
            iterations: 5,
            ..ToyHyperParams::default()
        };
        assert_eq!(train(&sc, LossVariant::Baseline, &hp).com_evaluations, 0);
        assert_eq!(train(&sc, LossVariant::AggLoss, &hp).com_evaluations, 6);
    }

    #[test]
    fn scene_order_does_not_matter() {
        let sc = scenes(5, 5);
        let mut rev = sc.clone();
        rev.reverse();
        let hp = ToyHyperParams {
            iterations: 10,
            ..ToyHyperParams::default()
        };
        assert_eq!(
            train(&sc, LossVariant::AggLoss, &hp).weights,
            train(&rev, LossVariant::AggLoss, &hp).weights
        );
    }

    #[test]
    fn divergence_reported_with_trace() {
        let sc = scenes(2, 6);
        let hp = ToyHyperParams {
            learning_rate: 1e308,
            iterations: 50,
            ..ToyHyperParams::default()
        };
        let err = train_toy_regressor(
            &sc,
            LossVariant::AggLoss,
            &AnchorConfig::default(),
            &MatchConfig::default(),
            &FeatureConfig::default(),
            &hp,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Diverged { ref trace, .. } if !trace.is_empty()));
    }
}
