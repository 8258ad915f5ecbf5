use serde::{Deserialize, Serialize};

use super::BBox;
use crate::error::{Error, Result};

/// Faster R-CNN box parameterization relative to an anchor: center offsets
/// normalized by the anchor size and log size ratios.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EncodedDelta {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl EncodedDelta {
    pub const ZERO: EncodedDelta = EncodedDelta {
        tx: 0.0,
        ty: 0.0,
        tw: 0.0,
        th: 0.0,
    };

    pub fn new(tx: f64, ty: f64, tw: f64, th: f64) -> Self {
        Self { tx, ty, tw, th }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn sub(self, other: EncodedDelta) -> EncodedDelta {
        Self::new(
            self.tx - other.tx,
            self.ty - other.ty,
            self.tw - other.tw,
            self.th - other.th,
        )
    }
}

fn check_anchor(anchor: &BBox) -> Result<()> {
    if anchor.width() > 0.0 && anchor.height() > 0.0 {
        Ok(())
    } else {
        Err(Error::DegenerateBox(
            "anchor must have positive width and height",
        ))
    }
}

pub fn encode_box(anchor: &BBox, gt: &BBox) -> Result<EncodedDelta> {
    check_anchor(anchor)?;
    let (gw, gh) = (gt.width(), gt.height());
    if gw <= 0.0 || gh <= 0.0 {
        return Err(Error::DegenerateBox(
            "encoded box must have positive width and height",
        ));
    }
    let (aw, ah) = (anchor.width(), anchor.height());
    let (acx, acy) = anchor.center();
    let (gcx, gcy) = gt.center();
    Ok(EncodedDelta {
        tx: (gcx - acx) / aw,
        ty: (gcy - acy) / ah,
        tw: (gw / aw).ln(),
        th: (gh / ah).ln(),
    })
}

pub fn decode_box(anchor: &BBox, d: &EncodedDelta) -> Result<BBox> {
    check_anchor(anchor)?;
    let (aw, ah) = (anchor.width(), anchor.height());
    let (acx, acy) = anchor.center();
    let cx = acx + d.tx * aw;
    let cy = acy + d.ty * ah;
    let w = aw * d.tw.exp();
    let h = ah * d.th.exp();
    BBox::from_center(cx, cy, w, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_encodes_to_zero() {
        let a = BBox::new(10.0, 20.0, 30.0, 70.0).unwrap();
        assert_eq!(encode_box(&a, &a).unwrap(), EncodedDelta::ZERO);
    }

    #[test]
    fn shift_by_one_anchor_width() {
        let a = BBox::new(10.0, 20.0, 30.0, 70.0).unwrap();
        let d = encode_box(&a, &a.translate(20.0, 0.0)).unwrap();
        assert!((d.tx - 1.0).abs() < 1e-15);
        assert_eq!(d.ty, 0.0);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let flat = BBox::new(0.0, 0.0, 10.0, 0.0).unwrap();
        assert!(encode_box(&a, &flat).is_err());
        assert!(encode_box(&flat, &a).is_err());
        assert!(decode_box(&flat, &EncodedDelta::ZERO).is_err());
    }

    #[test]
    fn round_trip_ten_thousand_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let rbox = |rng: &mut ChaCha8Rng| {
                let x = rng.random_range(-500.0..500.0);
                let y = rng.random_range(-500.0..500.0);
                let w = rng.random_range(0.5..400.0);
                let h = rng.random_range(0.5..400.0);
                BBox::new(x, y, x + w, y + h).unwrap()
            };
            let anchor = rbox(&mut rng);
            let gt = rbox(&mut rng);
            let back = decode_box(&anchor, &encode_box(&anchor, &gt).unwrap()).unwrap();
            let scale = gt.to_array().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (u, v) in back.to_array().iter().zip(gt.to_array()) {
                assert!((u - v).abs() <= 1e-9 * scale, "{back:?} vs {gt:?}");
            }
        }
    }
}
