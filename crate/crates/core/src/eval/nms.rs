use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

use super::Detection;

fn check_thresh(iou_thresh: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&iou_thresh) {
        return Err(Error::InvalidConfig(format!(
            "NMS threshold must lie in [0, 1], got {iou_thresh}"
        )));
    }
    Ok(())
}

/// Indices sorted by descending score; equal scores keep input order.
pub(crate) fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy NMS over one image. Returns kept indices in descending score
/// order. A box is suppressed when its IoU with a kept box is strictly
/// greater than `iou_thresh`, so a threshold of 1 keeps everything.
pub fn nms_indices(boxes: &[BBox], scores: &[f64], iou_thresh: f64) -> Result<Vec<usize>> {
    check_thresh(iou_thresh)?;
    if boxes.len() != scores.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} scores", boxes.len()),
            found: format!("{}", scores.len()),
        });
    }
    let order = score_order(scores);
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if kept
            .iter()
            .all(|&k| iou(&boxes[k], &boxes[i]) <= iou_thresh)
        {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Greedy NMS applied independently per image. Images appear in order of
/// first occurrence; within an image, kept detections are score-descending.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Result<Vec<Detection>> {
    check_thresh(iou_thresh)?;
    let mut images: Vec<(&str, Vec<usize>)> = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        match images.iter_mut().find(|(id, _)| *id == d.image_id) {
            Some((_, v)) => v.push(i),
            None => images.push((&d.image_id, vec![i])),
        }
    }
    let mut out = Vec::with_capacity(dets.len());
    for (_, idx) in images {
        let boxes: Vec<BBox> = idx.iter().map(|&i| dets[i].bbox).collect();
        let scores: Vec<f64> = idx.iter().map(|&i| dets[i].score).collect();
        for k in nms_indices(&boxes, &scores, iou_thresh)? {
            out.push(dets[idx[k]].clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(id: &str, x: f64, y: f64, w: f64, h: f64, s: f64) -> Detection {
        Detection::new(id, BBox::from_xywh(x, y, w, h).unwrap(), s).unwrap()
    }

    #[test]
    fn examples() {
        assert!(nms(&[], 0.5).unwrap().is_empty());
        let one = vec![det("a", 0.0, 0.0, 10.0, 20.0, 0.3)];
        assert_eq!(nms(&one, 0.5).unwrap(), one);

        let dup = vec![
            det("a", 0.0, 0.0, 10.0, 20.0, 0.8),
            det("a", 0.0, 0.0, 10.0, 20.0, 0.9),
        ];
        let kept = nms(&dup, 0.5).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
        // identical boxes have IoU 1, which is not strictly above 1
        assert_eq!(nms(&dup, 1.0).unwrap().len(), 2);

        let disjoint: Vec<_> = (0..5)
            .map(|k| det("a", 20.0 * k as f64, 0.0, 10.0, 20.0, 0.1 * k as f64))
            .collect();
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(nms(&disjoint, t).unwrap().len(), 5);
        }
    }

    #[test]
    fn ties_break_by_input_order() {
        let d = vec![
            det("a", 0.0, 0.0, 10.0, 20.0, 0.5),
            det("a", 1.0, 0.0, 10.0, 20.0, 0.5),
        ];
        let kept = nms(&d, 0.3).unwrap();
        assert_eq!(kept, vec![d[0].clone()]);
    }

    #[test]
    fn images_do_not_suppress_each_other() {
        let d = vec![
            det("a", 0.0, 0.0, 10.0, 20.0, 0.5),
            det("b", 0.0, 0.0, 10.0, 20.0, 0.9),
        ];
        assert_eq!(nms(&d, 0.0).unwrap().len(), 2);
    }

    #[test]
    fn bad_threshold() {
        assert!(nms(&[], 1.5).is_err());
        assert!(nms(&[], -0.1).is_err());
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        prop::collection::vec(
            (
                0.0..60.0f64,
                0.0..60.0f64,
                5.0..30.0f64,
                5.0..40.0f64,
                0u8..8,
            ),
            0..12,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h, s)| det("i", x, y, w, h, s as f64 / 8.0))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn subset_separated_idempotent(dets in arb_dets(), t in 0.0..=1.0f64) {
            let kept = nms(&dets, t).unwrap();
            for k in &kept {
                prop_assert!(dets.contains(k));
            }
            for i in 0..kept.len() {
                for j in i + 1..kept.len() {
                    prop_assert!(iou(&kept[i].bbox, &kept[j].bbox) <= t);
                }
            }
            prop_assert_eq!(nms(&kept, t).unwrap(), kept);
        }

        #[test]
        fn threshold_one_keeps_all(dets in arb_dets()) {
            prop_assert_eq!(nms(&dets, 1.0).unwrap().len(), dets.len());
        }
    }
}
