use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Snap tolerance for bin edges that land on a cell boundary up to rounding.
const EDGE_EPS: f64 = 1e-9;

/// Dense `C x H x W` grid, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Feature cells per image pixel.
    pub spatial_scale: f64,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        spatial_scale: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch {
                expected: "positive feature map dimensions".into(),
                found: format!("{channels}x{height}x{width}"),
            });
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch {
                expected: format!(
                    "{} values for {channels}x{height}x{width}",
                    channels * height * width
                ),
                found: format!("{}", data.len()),
            });
        }
        if !(spatial_scale > 0.0 && spatial_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "spatial scale must be positive, got {spatial_scale}"
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "feature value {i} is not finite"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            spatial_scale,
            data,
        })
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Fixed-extent pooled feature, `C x H x W`, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledFeature {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl PooledFeature {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{channels}x{height}x{width}"),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub(crate) fn check_same_shape(&self, other: &PooledFeature) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.shape()),
                found: format!("{:?}", other.shape()),
            });
        }
        Ok(())
    }
}

/// Cell ranges `[start, end)` of `bins` evenly divided bins over the
/// continuous interval `[lo, hi)`, rounded outward and never empty.
fn bin_ranges(lo: f64, hi: f64, bins: usize, cells: usize) -> Vec<(usize, usize)> {
    let size = (hi - lo) / bins as f64;
    (0..bins)
        .map(|b| {
            let a = lo + b as f64 * size;
            let z = lo + (b + 1) as f64 * size;
            let start = ((a + EDGE_EPS).floor().max(0.0) as usize).min(cells - 1);
            let end = ((z - EDGE_EPS).ceil().max(0.0) as usize).clamp(start + 1, cells);
            (start, end)
        })
        .collect()
}

/// Max-pools `roi` (image pixels) into `pooled_h x pooled_w` adaptive bins
/// per channel.
///
/// The RoI is projected by the map's spatial scale and clipped to the map.
/// Bin edges come from an even real-valued division of the projected RoI,
/// rounded outward to whole cells so that every bin covers at least one cell.
pub fn roi_pool(
    feature: &FeatureMap,
    roi: &BBox,
    pooled_h: usize,
    pooled_w: usize,
) -> Result<PooledFeature> {
    if pooled_h == 0 || pooled_w == 0 {
        return Err(Error::InvalidConfig(
            "pooled extent must be positive".into(),
        ));
    }
    let s = feature.spatial_scale;
    let (w, h) = (feature.width as f64, feature.height as f64);
    let (x1, y1, x2, y2) = (roi.x_min * s, roi.y_min * s, roi.x_max * s, roi.y_max * s);
    if x2 <= 0.0 || y2 <= 0.0 || x1 >= w || y1 >= h {
        return Err(Error::RoiOutsideMap);
    }
    let (x1, x2) = (x1.clamp(0.0, w), x2.clamp(0.0, w));
    let (y1, y2) = (y1.clamp(0.0, h), y2.clamp(0.0, h));
    if x2 - x1 <= 0.0 || y2 - y1 <= 0.0 {
        return Err(Error::RoiCollapsed);
    }

    let rows = bin_ranges(y1, y2, pooled_h, feature.height);
    let cols = bin_ranges(x1, x2, pooled_w, feature.width);
    let mut data = Vec::with_capacity(feature.channels * pooled_h * pooled_w);
    for c in 0..feature.channels {
        for &(ys, ye) in &rows {
            for &(xs, xe) in &cols {
                let mut m = f64::NEG_INFINITY;
                for y in ys..ye {
                    for x in xs..xe {
                        m = m.max(feature.get(c, y, x));
                    }
                }
                data.push(m);
            }
        }
    }
    PooledFeature::new(feature.channels, pooled_h, pooled_w, data)
}
