use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::loss::NUM_PARTS;

const TILING_TOL: f64 = 1e-12;

/// Five sub-rectangles of a proposal as fractions `[left, top, right, bottom]`
/// of its width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartLayout {
    pub parts: [[f64; 4]; NUM_PARTS],
}

impl Default for PartLayout {
    fn default() -> Self {
        default_part_layout()
    }
}

/// Head strip over the top 20%, left/right torso over the next 40%, and
/// left/right legs over the bottom 40%.
pub fn default_part_layout() -> PartLayout {
    PartLayout {
        parts: [
            [0.0, 0.0, 1.0, 0.2],
            [0.0, 0.2, 0.5, 0.6],
            [0.5, 0.2, 1.0, 0.6],
            [0.0, 0.6, 0.5, 1.0],
            [0.5, 0.6, 1.0, 1.0],
        ],
    }
}

fn frac_area(p: &[f64; 4]) -> f64 {
    (p[2] - p[0]) * (p[3] - p[1])
}

fn frac_overlap(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    w * h
}

impl PartLayout {
    /// Checks that the parts are non-empty, inside the unit square and tile it.
    pub fn validate(&self) -> Result<()> {
        for (j, p) in self.parts.iter().enumerate() {
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) || p[2] <= p[0] || p[3] <= p[1] {
                return Err(Error::InvalidConfig(format!(
                    "part {} {:?} is not a positive-area rectangle inside [0,1]^2",
                    j + 1,
                    p
                )));
            }
        }
        for i in 0..NUM_PARTS {
            for j in i + 1..NUM_PARTS {
                if frac_overlap(&self.parts[i], &self.parts[j]) > TILING_TOL {
                    return Err(Error::InvalidConfig(format!(
                        "parts {} and {} overlap",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let total: f64 = self.parts.iter().map(frac_area).sum();
        if (total - 1.0).abs() > TILING_TOL {
            return Err(Error::InvalidConfig(format!(
                "parts cover {total} of the proposal instead of all of it"
            )));
        }
        Ok(())
    }

    /// The five parts in image coordinates for `proposal`.
    pub fn absolute(&self, proposal: &BBox) -> [BBox; NUM_PARTS] {
        let (w, h) = (proposal.width(), proposal.height());
        // endpoints are taken verbatim so parts never leave the proposal
        let lerp = |lo: f64, hi: f64, len: f64, f: f64| {
            if f <= 0.0 {
                lo
            } else if f >= 1.0 {
                hi
            } else {
                (lo + f * len).min(hi)
            }
        };
        let x = |f: f64| lerp(proposal.x_min, proposal.x_max, w, f);
        let y = |f: f64| lerp(proposal.y_min, proposal.y_max, h, f);
        self.parts.map(|p| BBox {
            x_min: x(p[0]),
            y_min: y(p[1]),
            x_max: x(p[2]),
            y_max: y(p[3]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_layout_tiles_unit_square() {
        let l = default_part_layout();
        l.validate().unwrap();
        assert_eq!(l.parts[0], [0.0, 0.0, 1.0, 0.2]);
        let total: f64 = l.parts.iter().map(frac_area).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bad_layouts_rejected() {
        let mut l = default_part_layout();
        l.parts[1] = [0.0, 0.1, 0.5, 0.6];
        assert!(l.validate().is_err());
        let mut l = default_part_layout();
        l.parts[4] = [0.5, 0.6, 0.9, 1.0];
        assert!(l.validate().is_err());
        let mut l = default_part_layout();
        l.parts[0] = [0.0, 0.2, 1.0, 0.2];
        assert!(l.validate().is_err());
    }

    proptest! {
        #[test]
        fn absolute_parts_tile_any_proposal(
            x in -100.0..100.0f64, y in -100.0..100.0f64, w in 1.0..300.0f64, h in 1.0..300.0f64,
        ) {
            let q = BBox::new(x, y, x + w, y + h).unwrap();
            let parts = default_part_layout().absolute(&q);
            let total: f64 = parts.iter().map(|p| p.area()).sum();
            prop_assert!((total - q.area()).abs() <= 1e-9 * q.area());
            for i in 0..5 {
                prop_assert!(q.contains(&parts[i]));
                for j in i + 1..5 {
                    prop_assert_eq!(parts[i].intersection_area(&parts[j]), 0.0);
                }
            }
        }
    }
}
