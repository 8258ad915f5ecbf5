use serde::{Deserialize, Serialize};

use super::{encode_box, iou, BBox, EncodedDelta, GtObject};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchConfig {
    pub pos_thresh: f64,
    pub neg_thresh: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            pos_thresh: 0.5,
            neg_thresh: 0.3,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(in_unit(self.pos_thresh) && in_unit(self.neg_thresh))
            || self.pos_thresh <= self.neg_thresh
        {
            return Err(Error::InvalidConfig(format!(
                "matching thresholds need 0 <= neg ({}) < pos ({}) <= 1",
                self.neg_thresh, self.pos_thresh
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    /// Assigned to the ground truth at this index.
    Positive(usize),
    Negative,
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchAssignment {
    pub labels: Vec<AnchorLabel>,
    /// Regression targets, `Some` exactly for positive anchors.
    pub targets: Vec<Option<EncodedDelta>>,
}

impl MatchAssignment {
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().enumerate().filter_map(|(i, l)| match l {
            AnchorLabel::Positive(g) => Some((i, *g)),
            _ => None,
        })
    }

    pub fn num_positive(&self) -> usize {
        self.positives().count()
    }

    pub fn num_negative(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, AnchorLabel::Negative))
            .count()
    }
}

/// Assigns every anchor a label.
///
/// An anchor is positive when its IoU with some non-ignored ground truth
/// reaches `pos_thresh` (assigned to the argmax ground truth). Each
/// non-ignored ground truth additionally claims its best anchor among those
/// not already claimed this way, regardless of threshold, as long as that
/// anchor overlaps it at all. Anchors below `neg_thresh` whose overlap with
/// ignore regions also stays below `pos_thresh` are negative; everything else
/// is ignored.
pub fn match_anchors(
    anchors: &[BBox],
    gts: &[GtObject],
    cfg: &MatchConfig,
) -> Result<MatchAssignment> {
    cfg.validate()?;
    let n = anchors.len();
    let mut labels = vec![AnchorLabel::Negative; n];
    let mut best_gt: Vec<Option<(usize, f64)>> = vec![None; n];
    let mut ignore_iou = vec![0.0f64; n];

    for (i, a) in anchors.iter().enumerate() {
        for (g, gt) in gts.iter().enumerate() {
            let v = iou(a, &gt.full);
            if gt.ignore {
                ignore_iou[i] = ignore_iou[i].max(v);
            } else if best_gt[i].is_none_or(|(_, m)| v > m) {
                best_gt[i] = Some((g, v));
            }
        }
    }

    for i in 0..n {
        let max_iou = best_gt[i].map_or(0.0, |(_, v)| v);
        labels[i] = match best_gt[i] {
            Some((g, v)) if v >= cfg.pos_thresh => AnchorLabel::Positive(g),
            _ if max_iou < cfg.neg_thresh && ignore_iou[i] < cfg.pos_thresh => {
                AnchorLabel::Negative
            }
            _ => AnchorLabel::Ignored,
        };
    }

    let mut claimed = vec![false; n];
    for (g, gt) in gts.iter().enumerate() {
        if gt.ignore {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, a) in anchors.iter().enumerate() {
            if claimed[i] {
                continue;
            }
            let v = iou(a, &gt.full);
            if v > 0.0 && best.is_none_or(|(_, m)| v > m) {
                best = Some((i, v));
            }
        }
        if let Some((i, _)) = best {
            claimed[i] = true;
            labels[i] = AnchorLabel::Positive(g);
        }
    }

    let targets = labels
        .iter()
        .zip(anchors)
        .map(|(l, a)| match l {
            AnchorLabel::Positive(g) => encode_box(a, &gts[*g].full).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MatchAssignment { labels, targets })
}

/// Anchors sharing one ground truth, with the target their mean prediction
/// is pulled towards.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationGroup {
    pub gt_index: usize,
    pub target: EncodedDelta,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AggregationGroups {
    pub groups: Vec<AggregationGroup>,
}

impl AggregationGroups {
    /// Number of ground truths associated with more than one anchor.
    pub fn rho(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn total_members(&self) -> usize {
        self.groups.iter().map(|g| g.members.len()).sum()
    }

    /// Shifts every member index by `offset`, for concatenating batches.
    pub fn offset(mut self, offset: usize) -> Self {
        for g in &mut self.groups {
            for m in &mut g.members {
                *m += offset;
            }
        }
        self
    }
}

/// One group per ground truth with at least two positive anchors, in ground
/// truth order. The group target is the mean of its members' encoded targets,
/// so a group whose members all predict their own targets has zero
/// compactness loss.
pub fn build_aggregation_groups(m: &MatchAssignment) -> AggregationGroups {
    let num_gt = m.positives().map(|(_, g)| g + 1).max().unwrap_or(0);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_gt];
    for (i, g) in m.positives() {
        members[g].push(i);
    }
    let groups = members
        .into_iter()
        .enumerate()
        .filter(|(_, ms)| ms.len() >= 2)
        .map(|(gt_index, members)| {
            let mut acc = [0.0; 4];
            for &i in &members {
                let t = m.targets[i]
                    .expect("positive anchors carry targets")
                    .to_array();
                for d in 0..4 {
                    acc[d] += t[d];
                }
            }
            let k = members.len() as f64;
            AggregationGroup {
                gt_index,
                target: EncodedDelta::from_array(acc.map(|v| v / k)),
                members,
            }
        })
        .collect();
    AggregationGroups { groups }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gt(x0: f64, y0: f64, x1: f64, y1: f64) -> GtObject {
        GtObject::fully_visible(BBox::new(x0, y0, x1, y1).unwrap()).unwrap()
    }

    fn anchor_with_iou(target: f64) -> BBox {
        // a 10x10 box shifted right so that IoU with (0,0,10,10) equals target
        let overlap = 20.0 * target / (1.0 + target);
        let dx = 10.0 - overlap;
        BBox::new(dx, 0.0, 10.0 + dx, 10.0).unwrap()
    }

    #[test]
    fn threshold_rules() {
        let g = gt(0.0, 0.0, 10.0, 10.0);
        let cfg = MatchConfig::default();
        let a = anchor_with_iou(0.9);
        assert!((iou(&a, &g.full) - 0.9).abs() < 1e-12);
        let far = BBox::new(100.0, 0.0, 110.0, 10.0).unwrap();
        let m = match_anchors(&[a, far], &[g], &cfg).unwrap();
        assert_eq!(m.labels[0], AnchorLabel::Positive(0));
        assert_eq!(m.targets[0], Some(encode_box(&a, &g.full).unwrap()));
        assert_eq!(m.labels[1], AnchorLabel::Negative);
        assert_eq!(m.targets[1], None);

        let weak = anchor_with_iou(0.1);
        let m = match_anchors(&[weak, anchor_with_iou(0.4)], &[g], &cfg).unwrap();
        assert_eq!(m.labels[0], AnchorLabel::Negative);
        // best-match rule promotes the 0.4 anchor
        assert_eq!(m.labels[1], AnchorLabel::Positive(0));

        let m = match_anchors(&[weak, anchor_with_iou(0.4), a], &[g], &cfg).unwrap();
        assert_eq!(m.labels[1], AnchorLabel::Ignored);
    }

    #[test]
    fn empty_gts_all_negative() {
        let anchors = vec![anchor_with_iou(0.5); 3];
        let m = match_anchors(&anchors, &[], &MatchConfig::default()).unwrap();
        assert!(m.labels.iter().all(|l| *l == AnchorLabel::Negative));
    }

    #[test]
    fn ignore_regions() {
        let mut ig = gt(0.0, 0.0, 10.0, 10.0);
        ig.ignore = true;
        let m = match_anchors(
            &[anchor_with_iou(0.9), anchor_with_iou(0.1)],
            &[ig],
            &MatchConfig::default(),
        )
        .unwrap();
        assert_eq!(m.labels, vec![AnchorLabel::Ignored, AnchorLabel::Negative]);
    }

    #[test]
    fn thresholds_validated() {
        let cfg = MatchConfig {
            pos_thresh: 0.3,
            neg_thresh: 0.5,
        };
        assert!(match_anchors(&[], &[], &cfg).is_err());
    }

    fn assignment(per_gt: &[usize]) -> MatchAssignment {
        let mut labels = Vec::new();
        let mut targets = Vec::new();
        for (g, &count) in per_gt.iter().enumerate() {
            for k in 0..count {
                labels.push(AnchorLabel::Positive(g));
                targets.push(Some(EncodedDelta::new(k as f64, 0.0, 0.0, g as f64)));
                labels.push(AnchorLabel::Negative);
                targets.push(None);
            }
        }
        MatchAssignment { labels, targets }
    }

    #[test]
    fn group_examples() {
        let groups = build_aggregation_groups(&assignment(&[2]));
        assert_eq!(groups.rho(), 1);
        assert_eq!(groups.groups[0].members, vec![0, 2]);
        assert_eq!(
            groups.groups[0].target,
            EncodedDelta::new(0.5, 0.0, 0.0, 0.0)
        );

        let groups = build_aggregation_groups(&assignment(&[1, 1, 1]));
        assert_eq!(groups.rho(), 0);

        let groups = build_aggregation_groups(&assignment(&[3, 1, 2]));
        assert_eq!(groups.rho(), 2);
        let sizes: Vec<_> = groups.groups.iter().map(|g| g.members.len()).collect();
        assert_eq!(sizes, vec![3, 2]);
        assert_eq!(groups.groups[1].gt_index, 2);
    }

    fn arb_scene() -> impl Strategy<Value = (Vec<BBox>, Vec<GtObject>)> {
        let boxes = |n| {
            proptest::collection::vec((0.0..80.0f64, 0.0..80.0f64, 4.0..30.0f64, 4.0..30.0f64), n)
        };
        (
            boxes(1..40usize),
            boxes(0..6usize),
            proptest::collection::vec(any::<bool>(), 6),
        )
            .prop_map(|(a, g, ign)| {
                let anchors = a
                    .into_iter()
                    .map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
                    .collect();
                let gts = g
                    .into_iter()
                    .zip(ign)
                    .map(|((x, y, w, h), ignore)| {
                        let full = BBox::new(x, y, x + w, y + h).unwrap();
                        GtObject::new(full, full, ignore).unwrap()
                    })
                    .collect();
                (anchors, gts)
            })
    }

    proptest! {
        #[test]
        fn match_invariants((anchors, gts) in arb_scene(), pos in 0.5..0.9f64) {
            let cfg = MatchConfig { pos_thresh: pos, neg_thresh: 0.3 };
            let m = match_anchors(&anchors, &gts, &cfg).unwrap();
            for (l, t) in m.labels.iter().zip(&m.targets) {
                prop_assert_eq!(matches!(l, AnchorLabel::Positive(_)), t.is_some());
            }
            // every non-ignored gt with some overlapping anchor has a positive
            for (g, gt) in gts.iter().enumerate() {
                if gt.ignore || !anchors.iter().any(|a| iou(a, &gt.full) > 0.0) {
                    continue;
                }
                let claimable = anchors.len() >= gts.iter().filter(|g| !g.ignore).count();
                if claimable {
                    // may still fail if all overlapping anchors were claimed by earlier gts
                    let has = m.positives().any(|(_, gg)| gg == g);
                    let overlapping = anchors.iter().filter(|a| iou(a, &gt.full) > 0.0).count();
                    prop_assert!(has || overlapping <= g);
                }
            }
            // raising pos_thresh never adds positives beyond the best-match anchors
            let stricter = MatchConfig { pos_thresh: (pos + 0.1).min(1.0), neg_thresh: 0.3 };
            let m2 = match_anchors(&anchors, &gts, &stricter).unwrap();
            prop_assert!(m2.num_positive() <= m.num_positive());

            let groups = build_aggregation_groups(&m);
            prop_assert!(groups.total_members() <= m.num_positive());
            let mut seen = std::collections::HashSet::new();
            for grp in &groups.groups {
                prop_assert!(grp.members.len() >= 2);
                for &i in &grp.members {
                    prop_assert!(seen.insert(i));
                }
            }
        }
    }
}
