//! Log-average miss rate on a small hand-made set: one perfect image, one
//! with a duplicate and a miss, and one with a detection on an ignore region.
//! Prints the FPPI/miss-rate samples and MR-2 on every subset.

use crowddet::eval::{evaluate, EvalImage, Mr2Config, ScoredBox, Subset, MATCH_IOU};
use crowddet::geometry::{BBox, GtObject};

fn sb(x: f64, y: f64, w: f64, h: f64, score: f64) -> crowddet::Result<ScoredBox> {
    Ok(ScoredBox {
        bbox: BBox::from_xywh(x, y, w, h)?,
        score,
    })
}

fn person(x: f64, y: f64, h: f64, visible_frac: f64) -> crowddet::Result<GtObject> {
    let w = 0.41 * h;
    GtObject::new(
        BBox::from_xywh(x, y, w, h)?,
        BBox::from_xywh(x, y, w, visible_frac * h)?,
        false,
    )
}

fn main() -> crowddet::Result<()> {
    let ignore = GtObject::new(
        BBox::from_xywh(300.0, 20.0, 120.0, 60.0)?,
        BBox::from_xywh(300.0, 20.0, 120.0, 60.0)?,
        true,
    )?;
    let images = vec![
        EvalImage {
            id: "a".into(),
            gts: vec![person(10.0, 10.0, 120.0, 1.0)?],
            dets: vec![sb(10.0, 10.0, 49.2, 120.0, 0.95)?],
        },
        EvalImage {
            id: "b".into(),
            gts: vec![
                person(40.0, 30.0, 100.0, 0.8)?,
                person(200.0, 30.0, 90.0, 0.4)?,
            ],
            dets: vec![
                sb(41.0, 31.0, 41.0, 100.0, 0.9)?,
                sb(44.0, 34.0, 41.0, 98.0, 0.6)?,
            ],
        },
        EvalImage {
            id: "c".into(),
            gts: vec![person(100.0, 100.0, 80.0, 1.0)?, ignore],
            dets: vec![
                sb(100.0, 100.0, 32.8, 80.0, 0.7)?,
                sb(310.0, 25.0, 40.0, 50.0, 0.8)?,
            ],
        },
    ];
    let cfg = Mr2Config::default();
    for subset in Subset::ALL {
        let r = evaluate(&images, subset, MATCH_IOU, &cfg)?;
        println!("{subset:<10} gts {}  MR-2 {:6.2}%", r.num_gt, r.mr2);
    }
    let r = evaluate(&images, Subset::Reasonable, MATCH_IOU, &cfg)?;
    for (f, m) in &r.samples {
        println!("  fppi {f:.4}  miss {m:.3}");
    }
    Ok(())
}
