use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PooledFeature;
use crate::error::{Error, Result};
use crate::loss::PROB_EPS;

/// Widths of the occlusion unit: 3x3 conv (in -> hidden[0]), 3x3 conv
/// (hidden[0] -> hidden[1]), then a conv spanning the whole pooled extent
/// down to two logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionUnitConfig {
    pub in_channels: usize,
    pub hidden: [usize; 2],
    pub pooled_h: usize,
    pub pooled_w: usize,
}

impl Default for OcclusionUnitConfig {
    fn default() -> Self {
        Self {
            in_channels: 512,
            hidden: [128, 32],
            pooled_h: 7,
            pooled_w: 7,
        }
    }
}

impl OcclusionUnitConfig {
    fn num_params(&self) -> usize {
        let [c1, c2] = self.hidden;
        let area = self.pooled_h * self.pooled_w;
        c1 * self.in_channels * 9 + c1 + c2 * c1 * 9 + c2 + 2 * c2 * area + 2
    }
}

/// Weights of the occlusion unit. Convolution weights are laid out
/// `[out][in][ky][kx]`; the head is `[logit][channel][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionUnitParams {
    pub config: OcclusionUnitConfig,
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: [f64; 2],
}

impl OcclusionUnitParams {
    /// He-normal weights and zero biases from a seeded generator.
    pub fn init(config: &OcclusionUnitConfig, seed: u64) -> Result<Self> {
        let cfg = *config;
        if cfg.in_channels == 0 || cfg.hidden.contains(&0) || cfg.pooled_h == 0 || cfg.pooled_w == 0
        {
            return Err(Error::InvalidConfig(
                "occlusion unit widths and extent must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        };
        let [c1, c2] = cfg.hidden;
        let area = cfg.pooled_h * cfg.pooled_w;
        Ok(Self {
            conv1_w: draw(c1 * cfg.in_channels * 9, cfg.in_channels * 9),
            conv1_b: vec![0.0; c1],
            conv2_w: draw(c2 * c1 * 9, c1 * 9),
            conv2_b: vec![0.0; c2],
            head_w: draw(2 * c2 * area, c2 * area),
            head_b: [0.0; 2],
            config: cfg,
        })
    }

    /// Zeroes the head weights and sets its biases, so the unit outputs a
    /// constant score `softmax([hidden, visible])[1]`.
    pub fn force_bias(&mut self, hidden: f64, visible: f64) {
        self.head_w.iter_mut().for_each(|w| *w = 0.0);
        self.head_b = [hidden, visible];
    }

    pub fn num_params(&self) -> usize {
        self.config.num_params()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend(&self.conv1_w);
        v.extend(&self.conv1_b);
        v.extend(&self.conv2_w);
        v.extend(&self.conv2_b);
        v.extend(&self.head_w);
        v.extend(&self.head_b);
        v
    }

    pub fn from_flat(config: &OcclusionUnitConfig, flat: &[f64]) -> Result<Self> {
        if flat.len() != config.num_params() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} occlusion unit parameters", config.num_params()),
                found: format!("{}", flat.len()),
            });
        }
        let [c1, c2] = config.hidden;
        let area = config.pooled_h * config.pooled_w;
        let mut rest = flat;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        let conv1_w = take(c1 * config.in_channels * 9);
        let conv1_b = take(c1);
        let conv2_w = take(c2 * c1 * 9);
        let conv2_b = take(c2);
        let head_w = take(2 * c2 * area);
        let hb = take(2);
        Ok(Self {
            config: *config,
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            head_w,
            head_b: [hb[0], hb[1]],
        })
    }
}

/// 3x3 convolution with zero padding 1, stride 1.
fn conv3x3(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let cout = bias.len();
    let mut out = vec![0.0; cout * h * w];
    for o in 0..cout {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[o];
                for i in 0..cin {
                    for ky in 0..3 {
                        let Some(yy) = (y + ky).checked_sub(1).filter(|v| *v < h) else {
                            continue;
                        };
                        for kx in 0..3 {
                            let Some(xx) = (x + kx).checked_sub(1).filter(|v| *v < w) else {
                                continue;
                            };
                            acc += weights[((o * cin + i) * 3 + ky) * 3 + kx]
                                * input[(i * h + yy) * w + xx];
                        }
                    }
                }
                out[(o * h + y) * w + x] = acc;
            }
        }
    }
    out
}

/// Accumulates the weight, bias and (optionally) input gradients of
/// [`conv3x3`] given the output gradient.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    d_out: &[f64],
    d_weights: &mut [f64],
    d_bias: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let cout = d_bias.len();
    for o in 0..cout {
        for y in 0..h {
            for x in 0..w {
                let g = d_out[(o * h + y) * w + x];
                if g == 0.0 {
                    continue;
                }
                d_bias[o] += g;
                for i in 0..cin {
                    for ky in 0..3 {
                        let Some(yy) = (y + ky).checked_sub(1).filter(|v| *v < h) else {
                            continue;
                        };
                        for kx in 0..3 {
                            let Some(xx) = (x + kx).checked_sub(1).filter(|v| *v < w) else {
                                continue;
                            };
                            let wi = ((o * cin + i) * 3 + ky) * 3 + kx;
                            let xi = (i * h + yy) * w + xx;
                            d_weights[wi] += g * input[xi];
                            if let Some(d_in) = d_input.as_deref_mut() {
                                d_in[xi] += g * weights[wi];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitForward {
    pub hidden1: Vec<f64>,
    pub hidden2: Vec<f64>,
    pub logits: [f64; 2],
    /// Class probabilities `[occluded, visible]`.
    pub probs: [f64; 2],
    /// Visible-class probability clamped into the open unit interval.
    pub score: f64,
}

fn check_input(part: &PooledFeature, params: &OcclusionUnitParams) -> Result<()> {
    let c = &params.config;
    if part.shape() != (c.in_channels, c.pooled_h, c.pooled_w) {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}x{}", c.in_channels, c.pooled_h, c.pooled_w),
            found: format!("{}x{}x{}", part.channels, part.height, part.width),
        });
    }
    Ok(())
}

pub(crate) fn forward_full(
    part: &PooledFeature,
    params: &OcclusionUnitParams,
) -> Result<UnitForward> {
    check_input(part, params)?;
    let c = &params.config;
    let (h, w) = (c.pooled_h, c.pooled_w);
    let relu = |v: Vec<f64>| v.into_iter().map(|x| x.max(0.0)).collect::<Vec<_>>();
    let hidden1 = relu(conv3x3(
        &part.data,
        c.in_channels,
        h,
        w,
        &params.conv1_w,
        &params.conv1_b,
    ));
    let hidden2 = relu(conv3x3(
        &hidden1,
        c.hidden[0],
        h,
        w,
        &params.conv2_w,
        &params.conv2_b,
    ));
    let n = hidden2.len();
    let mut logits = params.head_b;
    for (k, l) in logits.iter_mut().enumerate() {
        *l += params.head_w[k * n..(k + 1) * n]
            .iter()
            .zip(&hidden2)
            .map(|(a, b)| a * b)
            .sum::<f64>();
    }
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let z = e[0] + e[1];
    let probs = [e[0] / z, e[1] / z];
    Ok(UnitForward {
        hidden1,
        hidden2,
        logits,
        probs,
        score: probs[1].clamp(PROB_EPS, 1.0 - PROB_EPS),
    })
}

/// Visibility score of one pooled part feature.
pub fn occlusion_unit_forward(part: &PooledFeature, params: &OcclusionUnitParams) -> Result<f64> {
    forward_full(part, params).map(|f| f.score)
}

/// Gradient of a downstream loss w.r.t. the flat parameters, given the
/// loss derivative `d_score` w.r.t. the unit's score.
pub fn occlusion_unit_backward(
    part: &PooledFeature,
    params: &OcclusionUnitParams,
    d_score: f64,
) -> Result<Vec<f64>> {
    let fwd = forward_full(part, params)?;
    let c = &params.config;
    let (h, w) = (c.pooled_h, c.pooled_w);
    let [c1, c2] = c.hidden;
    let area = h * w;

    let mut grad = vec![0.0; params.num_params()];
    let clamped = fwd.score != fwd.probs[1];
    if clamped {
        return Ok(grad);
    }
    let s = fwd.probs[1] * fwd.probs[0];
    let d_logits = [-d_score * s, d_score * s];

    let o1w = 0;
    let o1b = o1w + c1 * c.in_channels * 9;
    let o2w = o1b + c1;
    let o2b = o2w + c2 * c1 * 9;
    let ohw = o2b + c2;
    let ohb = ohw + 2 * c2 * area;

    let n = fwd.hidden2.len();
    let mut d_hidden2 = vec![0.0; n];
    for k in 0..2 {
        grad[ohb + k] = d_logits[k];
        for j in 0..n {
            grad[ohw + k * n + j] = d_logits[k] * fwd.hidden2[j];
            d_hidden2[j] += d_logits[k] * params.head_w[k * n + j];
        }
    }
    for (d, a) in d_hidden2.iter_mut().zip(&fwd.hidden2) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }

    let mut d_hidden1 = vec![0.0; fwd.hidden1.len()];
    {
        let (before, after) = grad.split_at_mut(o2b);
        conv3x3_backward(
            &fwd.hidden1,
            c1,
            h,
            w,
            &params.conv2_w,
            &d_hidden2,
            &mut before[o2w..],
            &mut after[..c2],
            Some(&mut d_hidden1),
        );
    }
    for (d, a) in d_hidden1.iter_mut().zip(&fwd.hidden1) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
    let (before, after) = grad.split_at_mut(o1b);
    conv3x3_backward(
        &part.data,
        c.in_channels,
        h,
        w,
        &params.conv1_w,
        &d_hidden1,
        &mut before[o1w..],
        &mut after[..c1],
        None,
    );
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{grad_check, occ_loss, DiffScalar, OccReduction};
    use rand::Rng;

    fn small() -> OcclusionUnitConfig {
        OcclusionUnitConfig {
            in_channels: 3,
            hidden: [4, 3],
            pooled_h: 3,
            pooled_w: 3,
        }
    }

    fn random_part(seed: u64, cfg: &OcclusionUnitConfig) -> PooledFeature {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.in_channels * cfg.pooled_h * cfg.pooled_w;
        PooledFeature::new(
            cfg.in_channels,
            cfg.pooled_h,
            cfg.pooled_w,
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn score_is_a_probability_and_deterministic() {
        let cfg = small();
        let params = OcclusionUnitParams::init(&cfg, 3).unwrap();
        for seed in 0..20 {
            let part = random_part(seed, &cfg);
            let f = forward_full(&part, &params).unwrap();
            assert!(f.score > 0.0 && f.score < 1.0);
            assert!((f.probs[0] + f.probs[1] - 1.0).abs() < 1e-15);
            let again = occlusion_unit_forward(&part, &params).unwrap();
            assert_eq!(f.score.to_bits(), again.to_bits());
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let params = OcclusionUnitParams::init(&small(), 3).unwrap();
        let wrong = PooledFeature::new(2, 3, 3, vec![0.0; 18]).unwrap();
        assert!(occlusion_unit_forward(&wrong, &params).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let cfg = small();
        let p = OcclusionUnitParams::init(&cfg, 9).unwrap();
        assert_eq!(
            OcclusionUnitParams::from_flat(&cfg, &p.to_flat()).unwrap(),
            p
        );
        assert!(OcclusionUnitParams::from_flat(&cfg, &[0.0; 3]).is_err());
    }

    /// `occ_loss` over several parts as a function of the flat unit parameters.
    fn occ_of_params(
        cfg: &OcclusionUnitConfig,
        parts: &[PooledFeature],
        targets: &[[bool; 5]],
        flat: &[f64],
    ) -> Result<DiffScalar> {
        let params = OcclusionUnitParams::from_flat(cfg, flat)?;
        let mut scores = Vec::new();
        for chunk in parts.chunks(5) {
            let mut s = [0.0; 5];
            for (o, p) in s.iter_mut().zip(chunk) {
                *o = occlusion_unit_forward(p, &params)?;
            }
            scores.push(s);
        }
        let loss = occ_loss(&scores, targets, OccReduction::Sum)?;
        let mut grad = vec![0.0; flat.len()];
        for (k, part) in parts.iter().enumerate() {
            let g = occlusion_unit_backward(part, &params, loss.grad[k])?;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok(DiffScalar {
            value: loss.value,
            grad,
        })
    }

    #[test]
    fn occ_loss_gradient_wrt_params() {
        let cfg = small();
        for seed in 0..4 {
            let params = OcclusionUnitParams::init(&cfg, seed).unwrap();
            let parts: Vec<_> = (0..10).map(|k| random_part(seed * 100 + k, &cfg)).collect();
            let targets = [
                [true, false, true, true, false],
                [false, false, true, false, true],
            ];
            let out = grad_check(
                |flat| occ_of_params(&cfg, &parts, &targets, flat),
                &params.to_flat(),
                1e-6,
                1e-4,
            )
            .unwrap();
            assert!(out.passed, "{out:?}");
        }
    }
}
