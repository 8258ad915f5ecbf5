//! Box algebra, anchors, anchor matching and the aggregation groups consumed
//! by the compactness loss.

mod anchors;
mod encode;
mod matching;

pub use anchors::{densify_small_anchors, generate_anchors, AnchorConfig, AnchorSet};
pub use encode::{decode_box, encode_box, EncodedDelta};
pub use matching::{
    build_aggregation_groups, match_anchors, AggregationGroup, AggregationGroups, AnchorLabel,
    MatchAssignment, MatchConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in pixel coordinates, stored as corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite or inverted corners. Zero-area boxes
    /// are allowed here; use [`BBox::new_positive`] where area must be positive.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let reason = if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            Some("non-finite coordinate")
        } else if x_max < x_min {
            Some("x_max < x_min")
        } else if y_max < y_min {
            Some("y_max < y_min")
        } else {
            None
        };
        match reason {
            Some(reason) => Err(Error::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
                reason,
            }),
            None => Ok(Self {
                x_min,
                y_min,
                x_max,
                y_max,
            }),
        }
    }

    pub fn new_positive(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self::new(x_min, y_min, x_max, y_max)?;
        if b.area() <= 0.0 {
            return Err(Error::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
                reason: "zero area",
            });
        }
        Ok(b)
    }

    /// From `[x, y, w, h]` as used by the annotation and detection files.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Overlapping region, `None` when the boxes do not overlap with positive area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        (x_max > x_min && y_max > y_min).then_some(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    /// Component-wise containment: `other` lies inside `self`.
    pub fn contains(&self, other: &BBox) -> bool {
        other.x_min >= self.x_min
            && other.y_min >= self.y_min
            && other.x_max <= self.x_max
            && other.y_max <= self.y_max
    }

    /// Clips the box to `[0, width] x [0, height]`.
    pub fn clamp_to(&self, width: f64, height: f64) -> BBox {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        BBox {
            x_min: cx(self.x_min),
            y_min: cy(self.y_min),
            x_max: cx(self.x_max),
            y_max: cy(self.y_max),
        }
    }
}

/// Intersection over union. A zero-area union is degenerate and yields 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    try_iou(a, b).unwrap_or(0.0)
}

/// Like [`iou`] but reports a zero-area union as `None`.
pub fn try_iou(a: &BBox, b: &BBox) -> Option<f64> {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return None;
    }
    Some((inter / union).clamp(0.0, 1.0))
}

/// Fraction of `part`'s area covered by `visible`.
pub fn occlusion_fraction(part: &BBox, visible: &BBox) -> Result<f64> {
    let area = part.area();
    if area <= 0.0 {
        return Err(Error::DegenerateBox("part rectangle has zero area"));
    }
    Ok((part.intersection_area(visible) / area).clamp(0.0, 1.0))
}

/// A ground-truth pedestrian: full-body box plus its visible region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub full: BBox,
    pub visible: BBox,
    pub ignore: bool,
}

impl GtObject {
    /// The full box must have positive area and contain the visible box. A
    /// zero-area visible box denotes a fully occluded pedestrian.
    pub fn new(full: BBox, visible: BBox, ignore: bool) -> Result<Self> {
        if full.area() <= 0.0 {
            return Err(Error::DegenerateBox("ground-truth full box has zero area"));
        }
        if !full.contains(&visible) {
            return Err(Error::VisibleOutsideFull);
        }
        Ok(Self {
            full,
            visible,
            ignore,
        })
    }

    pub fn fully_visible(full: BBox) -> Result<Self> {
        Self::new(full, full, false)
    }

    pub fn height(&self) -> f64 {
        self.full.height()
    }

    /// `area(visible) / area(full)`.
    pub fn visibility(&self) -> f64 {
        (self.visible.area() / self.full.area()).clamp(0.0, 1.0)
    }

    /// `1 - area(visible) / area(full)`.
    pub fn occlusion(&self) -> f64 {
        1.0 - self.visibility()
    }
}
