//! Detection losses with analytic gradients.
//!
//! Every batch loss returns a [`DiffScalar`] whose gradient is laid out over
//! the batch's prediction parameters, five per anchor: the probability `p`
//! followed by the four encoded deltas `tx, ty, tw, th`. The occlusion loss
//! has five parameters (one visibility score per part) per proposal, and the
//! Fast R-CNN loss concatenates the two layouts.

mod gradcheck;
mod terms;

pub use gradcheck::{grad_check, random_batch, random_occlusion, GradCheckOutcome};
pub use terms::{
    agg_loss, cls_loss, com_loss, frc_loss, frc_loss_terms, occ_loss, reg_loss, rpn_loss,
    rpn_loss_terms, smooth_l1, LossTerms,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AggregationGroups, EncodedDelta};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-7;

/// Parameters per anchor in the gradient layout.
pub const PARAMS_PER_ANCHOR: usize = 5;

/// Number of body parts scored by the occlusion unit.
pub const NUM_PARTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OccReduction {
    /// Summed over proposals, as the occlusion loss is written.
    #[default]
    Sum,
    /// Divided by the number of proposals.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the aggregation loss.
    pub alpha: f64,
    /// Weight of the compactness term inside the aggregation loss.
    pub beta: f64,
    /// Weight of the occlusion loss.
    pub lambda: f64,
    /// Visibility threshold for part targets.
    pub theta: f64,
    pub occ_reduction: OccReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            lambda: 1.0,
            theta: 0.5,
            occ_reduction: OccReduction::Sum,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda", self.lambda),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a finite non-negative weight, got {v}"
                )));
            }
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "theta must lie in (0, 1), got {}",
                self.theta
            )));
        }
        Ok(())
    }
}

/// A scalar with its gradient over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffScalar {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl DiffScalar {
    pub fn zero(num_params: usize) -> Self {
        Self {
            value: 0.0,
            grad: vec![0.0; num_params],
        }
    }

    /// `self + weight * other`, both over the same layout.
    pub fn add_scaled(mut self, weight: f64, other: &DiffScalar) -> Self {
        debug_assert_eq!(self.grad.len(), other.grad.len());
        self.value += weight * other.value;
        for (g, o) in self.grad.iter_mut().zip(&other.grad) {
            *g += weight * o;
        }
        self
    }

    pub fn scale(mut self, weight: f64) -> Self {
        self.value *= weight;
        for g in &mut self.grad {
            *g *= weight;
        }
        self
    }
}

/// Predictions, labels, targets and aggregation groups for one mini-batch of
/// anchors. Only anchors contributing to the loss belong in a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch {
    /// Predicted pedestrian probability per anchor.
    pub scores: Vec<f64>,
    /// Predicted encoded deltas per anchor.
    pub deltas: Vec<EncodedDelta>,
    /// Ground-truth class per anchor (`true` = pedestrian).
    pub labels: Vec<bool>,
    /// Regression targets; required for every positive anchor.
    pub targets: Vec<Option<EncodedDelta>>,
    pub groups: AggregationGroups,
    /// Classification normalizer.
    pub n_cls: usize,
    /// Regression normalizer.
    pub n_reg: usize,
}

impl LossBatch {
    /// Builds a batch with `n_cls` = all anchors and `n_reg` = positive anchors.
    pub fn new(
        scores: Vec<f64>,
        deltas: Vec<EncodedDelta>,
        labels: Vec<bool>,
        targets: Vec<Option<EncodedDelta>>,
        groups: AggregationGroups,
    ) -> Result<Self> {
        let n_cls = labels.len();
        let n_reg = labels.iter().filter(|l| **l).count();
        let batch = Self {
            scores,
            deltas,
            labels,
            targets,
            groups,
            n_cls,
            n_reg,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_com(&self) -> usize {
        self.groups.rho()
    }

    pub fn num_params(&self) -> usize {
        PARAMS_PER_ANCHOR * self.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.scores.len() != n || self.deltas.len() != n || self.targets.len() != n {
            return Err(Error::InconsistentBatch(format!(
                "lengths differ: {} scores, {} deltas, {} labels, {} targets",
                self.scores.len(),
                self.deltas.len(),
                n,
                self.targets.len()
            )));
        }
        let mut seen = vec![false; n];
        for g in &self.groups.groups {
            if g.members.len() < 2 {
                return Err(Error::InconsistentBatch(
                    "aggregation group with fewer than two members".into(),
                ));
            }
            for &m in &g.members {
                if m >= n {
                    return Err(Error::InconsistentBatch(format!(
                        "group member {m} out of range for {n} anchors"
                    )));
                }
                if std::mem::replace(&mut seen[m], true) {
                    return Err(Error::InconsistentBatch(format!(
                        "anchor {m} belongs to more than one group"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Flat prediction parameters in the gradient layout.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (p, d) in self.scores.iter().zip(&self.deltas) {
            out.push(*p);
            out.extend_from_slice(&d.to_array());
        }
        out
    }

    /// Copy of the batch with predictions replaced from a flat vector.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.num_params()),
                found: format!("{}", params.len()),
            });
        }
        let mut out = self.clone();
        for (i, chunk) in params.chunks_exact(PARAMS_PER_ANCHOR).enumerate() {
            out.scores[i] = chunk[0];
            out.deltas[i] = EncodedDelta::new(chunk[1], chunk[2], chunk[3], chunk[4]);
        }
        Ok(out)
    }

    /// Reorders anchors so that new anchor `k` is old anchor `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut groups = self.groups.clone();
        for g in &mut groups.groups {
            for m in &mut g.members {
                *m = inverse[*m];
            }
        }
        Self {
            scores: perm.iter().map(|&i| self.scores[i]).collect(),
            deltas: perm.iter().map(|&i| self.deltas[i]).collect(),
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
            targets: perm.iter().map(|&i| self.targets[i]).collect(),
            groups,
            n_cls: self.n_cls,
            n_reg: self.n_reg,
        }
    }

    /// The same batch with every prediction equal to its label and target.
    pub fn perfect(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.len() {
            out.scores[i] = if self.labels[i] {
                1.0 - PROB_EPS
            } else {
                PROB_EPS
            };
            if let Some(t) = self.targets[i] {
                out.deltas[i] = t;
            }
        }
        for g in &mut out.groups.groups {
            let k = g.members.len() as f64;
            let mut acc = [0.0; 4];
            for &m in &g.members {
                let d = out.deltas[m].to_array();
                for c in 0..4 {
                    acc[c] += d[c];
                }
            }
            g.target = EncodedDelta::from_array(acc.map(|v| v / k));
        }
        out
    }
}
