use rand::seq::SliceRandom;
use rand::Rng;

use super::{DiffScalar, LossBatch, NUM_PARTS};
use crate::error::{Error, Result};
use crate::geometry::{AggregationGroup, AggregationGroups, EncodedDelta};

/// Denominator floor of the relative error, so that near-zero gradient
/// components are compared in absolute terms.
const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOutcome {
    pub max_rel_error: f64,
    /// Parameter index with the largest error.
    pub worst_param: usize,
    pub passed: bool,
}

/// Compares the analytic gradient of `loss_fn` at `params` against central
/// finite differences over every parameter.
///
/// The relative error of one component is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)`.
pub fn grad_check<F>(
    loss_fn: F,
    params: &[f64],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckOutcome>
where
    F: Fn(&[f64]) -> Result<DiffScalar>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "step must be positive, got {step}"
        )));
    }
    let analytic = loss_fn(params)?;
    if analytic.grad.len() != params.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} gradient entries", params.len()),
            found: format!("{}", analytic.grad.len()),
        });
    }
    if !analytic.value.is_finite() {
        return Err(Error::NonFiniteLoss { index: usize::MAX });
    }
    let mut probe = params.to_vec();
    let mut worst = (0.0f64, 0usize);
    for i in 0..params.len() {
        let x = params[i];
        probe[i] = x + step;
        let up = loss_fn(&probe)?.value;
        probe[i] = x - step;
        let down = loss_fn(&probe)?.value;
        probe[i] = x;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFiniteLoss { index: i });
        }
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.grad[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }
    Ok(GradCheckOutcome {
        max_rel_error: worst.0,
        worst_param: worst.1,
        passed: worst.0 < tolerance,
    })
}

fn normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal) * std
}

fn random_delta<R: Rng + ?Sized>(rng: &mut R, std: f64) -> EncodedDelta {
    EncodedDelta::new(
        normal(rng, std),
        normal(rng, std),
        normal(rng, std),
        normal(rng, std),
    )
}

/// A random batch of `n` anchors: roughly 40% positives, probabilities in
/// `(0.02, 0.98)`, deltas spread across both branches of smooth L1, and the
/// positives partitioned into random disjoint groups.
pub fn random_batch<R: Rng + ?Sized>(rng: &mut R, n: usize) -> LossBatch {
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    if n > 0 && !labels.iter().any(|l| *l) {
        labels[0] = true;
    }
    let scores = (0..n).map(|_| rng.random_range(0.02..0.98)).collect();
    let deltas = (0..n).map(|_| random_delta(rng, 0.8)).collect();
    let targets = labels
        .iter()
        .map(|&l| l.then(|| random_delta(rng, 0.5)))
        .collect();

    let mut positives: Vec<usize> = (0..n).filter(|&i| labels[i]).collect();
    positives.shuffle(rng);
    let mut groups = Vec::new();
    let mut rest = positives.as_slice();
    while rest.len() >= 2 {
        let size = rng.random_range(1..=rest.len().min(5));
        let (head, tail) = rest.split_at(size);
        rest = tail;
        if head.len() >= 2 {
            let mut members = head.to_vec();
            members.sort_unstable();
            groups.push(AggregationGroup {
                gt_index: groups.len(),
                target: random_delta(rng, 0.5),
                members,
            });
        }
    }
    LossBatch::new(
        scores,
        deltas,
        labels,
        targets,
        AggregationGroups { groups },
    )
    .expect("random batch is consistent")
}

/// Random visibility scores and targets for `m` proposals.
pub fn random_occlusion<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
) -> (Vec<[f64; NUM_PARTS]>, Vec<[bool; NUM_PARTS]>) {
    let scores = (0..m)
        .map(|_| std::array::from_fn(|_| rng.random_range(0.02..0.98)))
        .collect();
    let targets = (0..m)
        .map(|_| std::array::from_fn(|_| rng.random_bool(0.5)))
        .collect();
    (scores, targets)
}
