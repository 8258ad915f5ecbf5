use super::{
    DiffScalar, LossBatch, LossConfig, OccReduction, NUM_PARTS, PARAMS_PER_ANCHOR, PROB_EPS,
};
use crate::error::{Error, Result};

/// Per-coordinate smooth L1 with the transition at 1.
fn huber(z: f64) -> (f64, f64) {
    if z.abs() < 1.0 {
        (0.5 * z * z, z)
    } else {
        (z.abs() - 0.5, z.signum())
    }
}

/// Smooth L1 summed over four coordinates, with gradient w.r.t. `x`.
pub fn smooth_l1(x: &[f64; 4]) -> DiffScalar {
    let mut out = DiffScalar::zero(4);
    for (d, &z) in x.iter().enumerate() {
        let (f, g) = huber(z);
        out.value += f;
        out.grad[d] = g;
    }
    out
}

/// Binary log loss at one probability; `(value, d/dp)`. Clamped probabilities
/// have zero derivative.
fn log_loss(p: f64, label: bool) -> (f64, f64) {
    let clamped = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let active = clamped == p;
    if label {
        (-clamped.ln(), if active { -1.0 / clamped } else { 0.0 })
    } else {
        (
            -(1.0 - clamped).ln(),
            if active { 1.0 / (1.0 - clamped) } else { 0.0 },
        )
    }
}

fn check_probability(index: usize, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::ProbabilityOutOfRange { index, value })
    }
}

/// Mean binary log loss over `n_cls` anchors.
pub fn cls_loss(batch: &LossBatch) -> Result<DiffScalar> {
    let mut out = DiffScalar::zero(batch.num_params());
    if batch.n_cls == 0 {
        return Ok(out);
    }
    let norm = 1.0 / batch.n_cls as f64;
    for (i, (&p, &label)) in batch.scores.iter().zip(&batch.labels).enumerate() {
        check_probability(i, p)?;
        let (f, g) = log_loss(p, label);
        out.value += norm * f;
        out.grad[i * PARAMS_PER_ANCHOR] = norm * g;
    }
    Ok(out)
}

/// Smooth L1 between predictions and targets of the positive anchors,
/// normalized by `n_reg`. Negative anchors are masked out.
pub fn reg_loss(batch: &LossBatch) -> Result<DiffScalar> {
    let mut out = DiffScalar::zero(batch.num_params());
    if batch.n_reg == 0 {
        return Ok(out);
    }
    let norm = 1.0 / batch.n_reg as f64;
    for (i, &label) in batch.labels.iter().enumerate() {
        if !label {
            continue;
        }
        let target = batch.targets[i].ok_or(Error::MissingTarget(i))?;
        let residual = batch.deltas[i].sub(target).to_array();
        let term = smooth_l1(&residual);
        out.value += norm * term.value;
        let base = i * PARAMS_PER_ANCHOR + 1;
        for d in 0..4 {
            out.grad[base + d] = norm * term.grad[d];
        }
    }
    Ok(out)
}

/// Smooth L1 between each group target and the mean prediction of its
/// members, averaged over groups. Zero when there are no groups.
pub fn com_loss(batch: &LossBatch) -> Result<DiffScalar> {
    let mut out = DiffScalar::zero(batch.num_params());
    let rho = batch.n_com();
    if rho == 0 {
        return Ok(out);
    }
    let norm = 1.0 / rho as f64;
    for group in &batch.groups.groups {
        let k = group.members.len() as f64;
        let mut mean = [0.0; 4];
        for &m in &group.members {
            let t = batch
                .deltas
                .get(m)
                .ok_or_else(|| Error::InconsistentBatch(format!("group member {m} out of range")))?
                .to_array();
            for d in 0..4 {
                mean[d] += t[d];
            }
        }
        let target = group.target.to_array();
        let diff: [f64; 4] = std::array::from_fn(|d| target[d] - mean[d] / k);
        let term = smooth_l1(&diff);
        out.value += norm * term.value;
        // d(diff)/d(t_m) = -1/k
        for &m in &group.members {
            let base = m * PARAMS_PER_ANCHOR + 1;
            for d in 0..4 {
                out.grad[base + d] -= norm * term.grad[d] / k;
            }
        }
    }
    Ok(out)
}

/// Component values of a composite loss. `com` is `None` when the
/// compactness term was never evaluated (zero weight).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub cls: f64,
    pub reg: f64,
    pub com: Option<f64>,
    pub occ: Option<f64>,
}

fn agg_terms(batch: &LossBatch, cfg: &LossConfig, terms: &mut LossTerms) -> Result<DiffScalar> {
    let reg = reg_loss(batch)?;
    terms.reg = reg.value;
    if cfg.beta == 0.0 {
        terms.com = None;
        return Ok(reg);
    }
    let com = com_loss(batch)?;
    terms.com = Some(com.value);
    Ok(reg.add_scaled(cfg.beta, &com))
}

/// Regression plus `beta`-weighted compactness.
pub fn agg_loss(batch: &LossBatch, cfg: &LossConfig) -> Result<DiffScalar> {
    cfg.validate()?;
    agg_terms(batch, cfg, &mut LossTerms::default())
}

/// Classification plus `alpha`-weighted aggregation loss, with its components.
pub fn rpn_loss_terms(batch: &LossBatch, cfg: &LossConfig) -> Result<(DiffScalar, LossTerms)> {
    cfg.validate()?;
    let mut terms = LossTerms::default();
    let cls = cls_loss(batch)?;
    terms.cls = cls.value;
    let agg = agg_terms(batch, cfg, &mut terms)?;
    Ok((cls.add_scaled(cfg.alpha, &agg), terms))
}

pub fn rpn_loss(batch: &LossBatch, cfg: &LossConfig) -> Result<DiffScalar> {
    rpn_loss_terms(batch, cfg).map(|(v, _)| v)
}

/// Log loss over the five part visibility scores of every proposal.
pub fn occ_loss(
    scores: &[[f64; NUM_PARTS]],
    targets: &[[bool; NUM_PARTS]],
    reduction: OccReduction,
) -> Result<DiffScalar> {
    if scores.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} visibility targets", scores.len()),
            found: format!("{}", targets.len()),
        });
    }
    let mut out = DiffScalar::zero(NUM_PARTS * scores.len());
    if scores.is_empty() {
        return Ok(out);
    }
    let norm = match reduction {
        OccReduction::Sum => 1.0,
        OccReduction::Mean => 1.0 / scores.len() as f64,
    };
    for (i, (o, t)) in scores.iter().zip(targets).enumerate() {
        for j in 0..NUM_PARTS {
            let idx = i * NUM_PARTS + j;
            check_probability(idx, o[j])?;
            let (f, g) = log_loss(o[j], t[j]);
            out.value += norm * f;
            out.grad[idx] = norm * g;
        }
    }
    Ok(out)
}

/// Fast R-CNN loss: classification, `alpha`-weighted aggregation and
/// `lambda`-weighted occlusion loss. The gradient covers the batch parameters
/// followed by the occlusion scores.
pub fn frc_loss_terms(
    batch: &LossBatch,
    occ_scores: &[[f64; NUM_PARTS]],
    occ_targets: &[[bool; NUM_PARTS]],
    cfg: &LossConfig,
) -> Result<(DiffScalar, LossTerms)> {
    let (rpn, mut terms) = rpn_loss_terms(batch, cfg)?;
    let occ = occ_loss(occ_scores, occ_targets, cfg.occ_reduction)?;
    terms.occ = Some(occ.value);
    let mut grad = rpn.grad;
    grad.extend(occ.grad.iter().map(|g| cfg.lambda * g));
    Ok((
        DiffScalar {
            value: rpn.value + cfg.lambda * occ.value,
            grad,
        },
        terms,
    ))
}

pub fn frc_loss(
    batch: &LossBatch,
    occ_scores: &[[f64; NUM_PARTS]],
    occ_targets: &[[bool; NUM_PARTS]],
    cfg: &LossConfig,
) -> Result<DiffScalar> {
    frc_loss_terms(batch, occ_scores, occ_targets, cfg).map(|(v, _)| v)
}
