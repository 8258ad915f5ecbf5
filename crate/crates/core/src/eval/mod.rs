//! Detection evaluation: greedy NMS, Caltech-style matching, FPPI/miss-rate
//! curves, the log-average miss rate and occlusion subsets.

mod curve;
mod nms;
mod subset;

pub use curve::{
    fppi_missrate_curve, match_detections, mean_and_variance, mr2, mr2_samples, nms_sweep,
    CurvePoint, DetOutcome, EvalCurve, EvalImage, GtOutcome, ImageMatch, Mr2Config, SweepReport,
};
pub use nms::{nms, nms_indices};
pub use subset::{subset_filter, Subset, SubsetSpec, MIN_HEIGHT};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Default IoU for a detection to count as a hit.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, bbox: BBox, score: f64) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "detection score {score} is not finite"
            )));
        }
        Ok(Self {
            image_id: image_id.into(),
            bbox,
            score,
        })
    }

    pub fn scored(&self) -> ScoredBox {
        ScoredBox {
            bbox: self.bbox,
            score: self.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub subset: Subset,
    pub num_images: usize,
    pub num_gt: usize,
    /// Log-average miss rate in percent.
    pub mr2: f64,
    pub samples: Vec<(f64, f64)>,
    pub curve: EvalCurve,
}

/// Subset filter, matching, curve and MR-2 in one pass.
pub fn evaluate(
    images: &[EvalImage],
    subset: Subset,
    iou_thresh: f64,
    mr2_cfg: &Mr2Config,
) -> Result<EvalReport> {
    let spec = subset.spec();
    let filtered: Vec<EvalImage> = images
        .iter()
        .map(|im| EvalImage {
            id: im.id.clone(),
            gts: subset_filter(&im.gts, &spec),
            dets: im.dets.clone(),
        })
        .collect();
    let curve = fppi_missrate_curve(&filtered, iou_thresh)?;
    let samples = mr2_samples(&curve, mr2_cfg)?;
    Ok(EvalReport {
        subset,
        num_images: curve.num_images,
        num_gt: curve.num_gt,
        mr2: mr2(&curve, mr2_cfg)?,
        samples,
        curve,
    })
}
