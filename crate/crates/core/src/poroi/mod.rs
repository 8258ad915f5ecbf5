//! Part occlusion-aware RoI pooling.
//!
//! A proposal is split into five body parts. The whole proposal and every
//! part are max-pooled to the same `H x W` extent, a small convolutional
//! occlusion unit scores each part's visibility, and the output is the whole
//! feature plus the visibility-weighted part features.

mod layout;
mod occlusion_unit;
mod pool;

pub use layout::{default_part_layout, PartLayout};
pub use occlusion_unit::{
    occlusion_unit_backward, occlusion_unit_forward, OcclusionUnitConfig, OcclusionUnitParams,
    UnitForward,
};
pub use pool::{roi_pool, FeatureMap, PooledFeature};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{occlusion_fraction, BBox, GtObject};
use crate::loss::NUM_PARTS;

/// Binary per-part visibility labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VisibilityTarget(pub [bool; NUM_PARTS]);

/// A part is visible when the fraction of its area covered by the
/// ground truth's visible box is strictly greater than `theta`.
pub fn visibility_targets(
    proposal: &BBox,
    layout: &PartLayout,
    gt: &GtObject,
    theta: f64,
) -> Result<VisibilityTarget> {
    if proposal.area() <= 0.0 {
        return Err(Error::DegenerateBox("proposal has zero area"));
    }
    let parts = layout.absolute(proposal);
    let mut out = [false; NUM_PARTS];
    for (o, part) in out.iter_mut().zip(&parts) {
        *o = occlusion_fraction(part, &gt.visible)? > theta;
    }
    Ok(VisibilityTarget(out))
}

/// `whole + sum_j scores[j] * parts[j]`, element-wise.
pub fn combine_features(
    whole: &PooledFeature,
    parts: &[PooledFeature; NUM_PARTS],
    scores: &[f64; NUM_PARTS],
) -> Result<PooledFeature> {
    for p in parts {
        whole.check_same_shape(p)?;
    }
    let mut out = whole.clone();
    for (part, &o) in parts.iter().zip(scores) {
        for (acc, v) in out.data.iter_mut().zip(&part.data) {
            *acc += o * v;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoroiOutput {
    pub whole: PooledFeature,
    pub parts: [PooledFeature; NUM_PARTS],
    /// Visibility scores exactly as used in the combination.
    pub scores: [f64; NUM_PARTS],
    pub combined: PooledFeature,
}

/// Pools the whole proposal and its five parts, scores the parts and combines.
pub fn poroi_forward(
    feature: &FeatureMap,
    proposal: &BBox,
    layout: &PartLayout,
    params: &OcclusionUnitParams,
    pooled_h: usize,
    pooled_w: usize,
) -> Result<PoroiOutput> {
    poroi_forward_with_scores(feature, proposal, layout, params, pooled_h, pooled_w, None)
}

/// As [`poroi_forward`], optionally replacing the predicted scores (for
/// example all ones, which disables visibility weighting).
pub fn poroi_forward_with_scores(
    feature: &FeatureMap,
    proposal: &BBox,
    layout: &PartLayout,
    params: &OcclusionUnitParams,
    pooled_h: usize,
    pooled_w: usize,
    fixed_scores: Option<[f64; NUM_PARTS]>,
) -> Result<PoroiOutput> {
    let whole = roi_pool(feature, proposal, pooled_h, pooled_w)?;
    let rects = layout.absolute(proposal);
    let mut pooled = Vec::with_capacity(NUM_PARTS);
    for r in &rects {
        pooled.push(roi_pool(feature, r, pooled_h, pooled_w)?);
    }
    let parts: [PooledFeature; NUM_PARTS] =
        pooled.try_into().expect("layout always yields five parts");
    let scores = match fixed_scores {
        Some(s) => s,
        None => {
            let mut s = [0.0; NUM_PARTS];
            for (o, part) in s.iter_mut().zip(&parts) {
                *o = occlusion_unit_forward(part, params)?;
            }
            s
        }
    };
    let combined = combine_features(&whole, &parts, &scores)?;
    Ok(PoroiOutput {
        whole,
        parts,
        scores,
        combined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ped(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn fully_visible_gt_gives_all_ones() {
        let full = ped(10.0, 10.0, 50.0, 110.0);
        let gt = GtObject::fully_visible(full).unwrap();
        let t = visibility_targets(&full, &default_part_layout(), &gt, 0.5).unwrap();
        assert_eq!(t.0, [true; 5]);
    }

    #[test]
    fn lower_half_occluded() {
        let full = ped(0.0, 0.0, 40.0, 100.0);
        let gt = GtObject::new(full, ped(0.0, 0.0, 40.0, 50.0), false).unwrap();
        // head 0..20 and torso 20..60 are covered 100% / 75%, legs 60..100 not at all
        let t = visibility_targets(&full, &default_part_layout(), &gt, 0.5).unwrap();
        assert_eq!(t.0, [true, true, true, false, false]);
    }

    #[test]
    fn fraction_exactly_theta_is_not_visible() {
        let full = ped(0.0, 0.0, 40.0, 100.0);
        // torso band 20..60: visible down to 40 covers exactly half of it
        let gt = GtObject::new(full, ped(0.0, 0.0, 40.0, 40.0), false).unwrap();
        let t = visibility_targets(&full, &default_part_layout(), &gt, 0.5).unwrap();
        assert_eq!(t.0, [true, false, false, false, false]);
        let gt = GtObject::new(full, ped(0.0, 0.0, 40.0, 40.0 + 1e-6), false).unwrap();
        let t = visibility_targets(&full, &default_part_layout(), &gt, 0.5).unwrap();
        assert_eq!(t.0, [true, true, true, false, false]);
    }

    fn feat(c: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> PooledFeature {
        let mut data = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ci, y, x));
                }
            }
        }
        PooledFeature::new(c, h, w, data).unwrap()
    }

    #[test]
    fn combine_examples() {
        let whole = feat(2, 3, 3, |c, y, x| (c * 9 + y * 3 + x) as f64 * 0.1);
        let parts: [PooledFeature; 5] =
            std::array::from_fn(|j| feat(2, 3, 3, |c, y, x| (j + 1) as f64 + (c + y + x) as f64));
        let ones = combine_features(&whole, &parts, &[1.0; 5]).unwrap();
        let mut expected = whole.data.clone();
        for p in &parts {
            for (e, v) in expected.iter_mut().zip(&p.data) {
                *e += v;
            }
        }
        assert_eq!(ones.data, expected);
        assert_eq!(combine_features(&whole, &parts, &[0.0; 5]).unwrap(), whole);
        let first = combine_features(&whole, &parts, &[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let f1: Vec<f64> = whole
            .data
            .iter()
            .zip(&parts[0].data)
            .map(|(a, b)| a + b)
            .collect();
        assert_eq!(first.data, f1);

        let mut bad = parts.clone();
        bad[3] = feat(2, 2, 3, |_, _, _| 0.0);
        assert!(combine_features(&whole, &bad, &[1.0; 5]).is_err());
    }

    #[test]
    fn forward_on_constant_map_with_saturated_unit() {
        let fm = FeatureMap::new(3, 20, 12, 1.0, vec![2.0; 3 * 20 * 12]).unwrap();
        let cfg = OcclusionUnitConfig {
            in_channels: 3,
            hidden: [4, 3],
            pooled_h: 3,
            pooled_w: 3,
        };
        let mut params = OcclusionUnitParams::init(&cfg, 5).unwrap();
        params.force_bias(-30.0, 30.0);
        let proposal = ped(1.0, 1.0, 11.0, 19.0);
        let out = poroi_forward(&fm, &proposal, &default_part_layout(), &params, 3, 3).unwrap();
        for s in out.scores {
            assert!(s > 1.0 - 1e-6 && s < 1.0);
        }
        for v in &out.combined.data {
            assert!((v - 12.0).abs() < 1e-5);
        }
        let again = poroi_forward(&fm, &proposal, &default_part_layout(), &params, 3, 3).unwrap();
        assert_eq!(out, again);
        let recombined = combine_features(&out.whole, &out.parts, &out.scores).unwrap();
        assert_eq!(recombined, out.combined);
    }

    proptest! {
        #[test]
        fn combine_is_linear_in_each_score(
            j in 0usize..5, a in -2.0..2.0f64, b in -2.0..2.0f64, seed in 0u64..1000,
        ) {
            let zero = feat(1, 2, 2, |_, _, _| 0.0);
            let parts: [PooledFeature; 5] = std::array::from_fn(|k| {
                feat(1, 2, 2, |_, y, x| ((seed + k as u64 * 7 + (y * 2 + x) as u64) % 11) as f64 - 5.0)
            });
            let with = |v: f64| {
                let mut s = [0.0; 5];
                s[j] = v;
                combine_features(&zero, &parts, &s).unwrap()
            };
            let lhs: Vec<f64> = with(a).data.iter().zip(&with(b).data).zip(&with(0.0).data)
                .map(|((x, y), z)| x + y - z).collect();
            for (l, r) in lhs.iter().zip(&with(a + b).data) {
                prop_assert!((l - r).abs() < 1e-12);
            }
        }

        #[test]
        fn visibility_monotone_in_visible_region(
            vx0 in 0.0..40.0f64, vy0 in 0.0..100.0f64, vw in 0.0..40.0f64, vh in 0.0..100.0f64,
            grow in 0.0..30.0f64,
        ) {
            let full = ped(0.0, 0.0, 40.0, 100.0);
            let vis = ped(vx0, vy0, (vx0 + vw).min(40.0), (vy0 + vh).min(100.0));
            let bigger = ped(
                (vis.x_min - grow).max(0.0), (vis.y_min - grow).max(0.0),
                (vis.x_max + grow).min(40.0), (vis.y_max + grow).min(100.0),
            );
            let layout = default_part_layout();
            let t0 = visibility_targets(&full, &layout, &GtObject::new(full, vis, false).unwrap(), 0.5).unwrap();
            let t1 = visibility_targets(&full, &layout, &GtObject::new(full, bigger, false).unwrap(), 0.5).unwrap();
            for k in 0..5 {
                prop_assert!(!t0.0[k] || t1.0[k]);
            }
        }
    }
}
