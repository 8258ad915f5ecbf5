use serde::{Deserialize, Serialize};

use super::BBox;
use crate::error::{Error, Result};

/// Anchor tiling parameters. Scales are anchor heights in pixels and the
/// aspect ratio is width / height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorConfig {
    pub stride: f64,
    pub scales: Vec<f64>,
    pub aspect_ratio: f64,
    pub densify_height: f64,
    pub densify_factor: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            stride: 16.0,
            scales: vec![48.0, 80.0, 128.0, 200.0],
            aspect_ratio: 0.41,
            densify_height: 100.0,
            densify_factor: 2,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty()
            || !(self.stride > 0.0 && self.aspect_ratio > 0.0)
            || self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(Error::InvalidConfig(
                "anchors need a positive stride, aspect ratio and at least one positive scale"
                    .into(),
            ));
        }
        if self.densify_factor == 0 || !(self.densify_height >= 0.0) {
            return Err(Error::InvalidConfig(
                "densify factor must be >= 1 and the height threshold non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Tiles the image and densifies the small anchors.
    pub fn build(&self, image_width: f64, image_height: f64) -> Result<AnchorSet> {
        let base = generate_anchors(
            (image_width, image_height),
            self.stride,
            &self.scales,
            self.aspect_ratio,
        )?;
        densify_small_anchors(&base, self.densify_height, self.densify_factor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub anchors: Vec<BBox>,
    /// Pixels per feature cell.
    pub stride: f64,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// One anchor per (cell, scale), centered on the cell, in row-major cell order
/// and then scale order.
pub fn generate_anchors(
    image_size: (f64, f64),
    stride: f64,
    scales: &[f64],
    aspect_ratio: f64,
) -> Result<AnchorSet> {
    if scales.is_empty() {
        return Err(Error::InvalidConfig(
            "anchor scales must not be empty".into(),
        ));
    }
    if !(stride > 0.0) || !(aspect_ratio > 0.0) || scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidConfig(
            "stride, scales and aspect ratio must be positive".into(),
        ));
    }
    let cols = (image_size.0 / stride).floor();
    let rows = (image_size.1 / stride).floor();
    if !(cols >= 1.0 && rows >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "stride {stride} leaves no cells on a {}x{} image",
            image_size.0, image_size.1
        )));
    }
    let (cols, rows) = (cols as usize, rows as usize);
    let mut anchors = Vec::with_capacity(cols * rows * scales.len());
    for r in 0..rows {
        let cy = (r as f64 + 0.5) * stride;
        for c in 0..cols {
            let cx = (c as f64 + 0.5) * stride;
            for &h in scales {
                anchors.push(BBox::from_center(cx, cy, h * aspect_ratio, h)?);
            }
        }
    }
    Ok(AnchorSet { anchors, stride })
}

/// Replaces every anchor shorter than `height_threshold` by `factor * factor`
/// copies on a sub-grid of pitch `stride / factor` centered on the original
/// center. Taller anchors pass through unchanged and the order is kept.
pub fn densify_small_anchors(
    set: &AnchorSet,
    height_threshold: f64,
    factor: usize,
) -> Result<AnchorSet> {
    if factor == 0 {
        return Err(Error::InvalidConfig("densify factor must be >= 1".into()));
    }
    let pitch = set.stride / factor as f64;
    let offsets: Vec<f64> = (0..factor)
        .map(|k| (k as f64 + 0.5) * pitch - 0.5 * set.stride)
        .collect();
    let mut anchors = Vec::with_capacity(set.len());
    for a in &set.anchors {
        if a.height() < height_threshold {
            for &dy in &offsets {
                for &dx in &offsets {
                    anchors.push(a.translate(dx, dy));
                }
            }
        } else {
            anchors.push(*a);
        }
    }
    Ok(AnchorSet {
        anchors,
        stride: set.stride,
    })
}
