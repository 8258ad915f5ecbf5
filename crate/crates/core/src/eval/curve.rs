use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, GtObject};

use super::nms::{nms_indices, score_order};
use super::ScoredBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DetOutcome {
    TruePositive(usize),
    FalsePositive,
    /// Matched an ignore region: neither true nor false positive.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GtOutcome {
    Matched(usize),
    Missed,
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageMatch {
    pub dets: Vec<DetOutcome>,
    pub gts: Vec<GtOutcome>,
}

/// Fraction of `det` covered by the ignore region `region`.
fn ioa(det: &BBox, region: &BBox) -> f64 {
    let a = det.area();
    if a <= 0.0 {
        return 0.0;
    }
    det.intersection_area(region) / a
}

/// Greedy one-to-one matching for one image. Detections are visited by
/// descending score and take the highest-IoU unmatched non-ignored ground
/// truth with IoU `>= iou_thresh`. A detection left unmatched that covers an
/// ignore region by at least `iou_thresh` of its own area is ignored;
/// any other unmatched detection is a false positive.
pub fn match_detections(dets: &[ScoredBox], gts: &[GtObject], iou_thresh: f64) -> ImageMatch {
    let mut det_out = vec![DetOutcome::FalsePositive; dets.len()];
    let mut gt_out: Vec<GtOutcome> = gts
        .iter()
        .map(|g| {
            if g.ignore {
                GtOutcome::Ignored
            } else {
                GtOutcome::Missed
            }
        })
        .collect();
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    for i in score_order(&scores) {
        let d = &dets[i].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if gt_out[j] != GtOutcome::Missed {
                continue;
            }
            let o = iou(d, &g.full);
            if o >= iou_thresh && best.is_none_or(|(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        det_out[i] = match best {
            Some((j, _)) => {
                gt_out[j] = GtOutcome::Matched(i);
                DetOutcome::TruePositive(j)
            }
            None if gts
                .iter()
                .any(|g| g.ignore && ioa(d, &g.full) >= iou_thresh) =>
            {
                DetOutcome::Ignored
            }
            None => DetOutcome::FalsePositive,
        };
    }
    ImageMatch {
        dets: det_out,
        gts: gt_out,
    }
}

/// Ground truths and scored detections of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalImage {
    pub id: String,
    pub gts: Vec<GtObject>,
    pub dets: Vec<ScoredBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    /// Score threshold producing this point; `None` for the origin, where
    /// no detection is accepted.
    pub score: Option<f64>,
    pub fppi: f64,
    pub miss_rate: f64,
}

/// Miss rate against false positives per image, one point per distinct
/// detection score, starting at `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalCurve {
    pub points: Vec<CurvePoint>,
    pub num_images: usize,
    pub num_gt: usize,
}

pub fn fppi_missrate_curve(images: &[EvalImage], iou_thresh: f64) -> Result<EvalCurve> {
    let mut ids: Vec<&str> = images.iter().map(|im| im.id.as_str()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InconsistentBatch(format!(
            "duplicate image id '{}'",
            w[0]
        )));
    }
    let num_gt = images
        .iter()
        .flat_map(|im| &im.gts)
        .filter(|g| !g.ignore)
        .count();
    if num_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    // Greedy matching visits detections by score, so the matching restricted
    // to detections above any threshold is a prefix of the full matching.
    // images are matched in parallel and collected in input order
    let mut events: Vec<(f64, bool)> = images
        .par_iter()
        .map(|im| {
            let m = match_detections(&im.dets, &im.gts, iou_thresh);
            im.dets
                .iter()
                .zip(&m.dets)
                .filter_map(|(d, o)| match o {
                    DetOutcome::TruePositive(_) => Some((d.score, true)),
                    DetOutcome::FalsePositive => Some((d.score, false)),
                    DetOutcome::Ignored => None,
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat();
    events.sort_by(|a, b| b.0.total_cmp(&a.0));

    let n_img = images.len() as f64;
    let mut points = vec![CurvePoint {
        score: None,
        fppi: 0.0,
        miss_rate: 1.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < events.len() {
        let s = events[k].0;
        while k < events.len() && events[k].0 == s {
            if events[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(CurvePoint {
            score: Some(s),
            fppi: fp as f64 / n_img,
            miss_rate: (num_gt - tp) as f64 / num_gt as f64,
        });
    }
    Ok(EvalCurve {
        points,
        num_images: images.len(),
        num_gt,
    })
}

impl EvalCurve {
    /// Step-interpolated miss rate: the miss rate of the last point with
    /// `fppi <= at`, or 1 if there is none.
    pub fn miss_rate_at(&self, at: f64) -> f64 {
        self.points
            .iter()
            .take_while(|p| p.fppi <= at)
            .last()
            .map_or(1.0, |p| p.miss_rate)
    }
}

/// Log-spaced FPPI sampling for the log-average miss rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mr2Config {
    pub points: usize,
    pub fppi_min: f64,
    pub fppi_max: f64,
}

impl Default for Mr2Config {
    fn default() -> Self {
        Self {
            points: 9,
            fppi_min: 1e-2,
            fppi_max: 1.0,
        }
    }
}

impl Mr2Config {
    pub fn validate(&self) -> Result<()> {
        if self.points == 0
            || !(self.fppi_min > 0.0)
            || !(self.fppi_max >= self.fppi_min)
            || !self.fppi_max.is_finite()
        {
            return Err(Error::InvalidConfig(format!(
                "MR-2 sampling needs points >= 1 and 0 < fppi_min <= fppi_max, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn sample_points(&self) -> Vec<f64> {
        let (a, b) = (self.fppi_min.log10(), self.fppi_max.log10());
        if self.points == 1 {
            return vec![self.fppi_min];
        }
        (0..self.points)
            .map(|k| 10f64.powf(a + (b - a) * k as f64 / (self.points - 1) as f64))
            .collect()
    }
}

/// Sampled `(fppi, miss_rate)` pairs used by [`mr2`].
pub fn mr2_samples(curve: &EvalCurve, cfg: &Mr2Config) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    if curve.points.is_empty() {
        return Err(Error::InvalidConfig("empty curve".into()));
    }
    Ok(cfg
        .sample_points()
        .into_iter()
        .map(|f| (f, curve.miss_rate_at(f)))
        .collect())
}

/// Geometric mean of the sampled miss rates, in percent. A zero sample makes
/// the mean exactly zero.
pub fn mr2(curve: &EvalCurve, cfg: &Mr2Config) -> Result<f64> {
    let samples = mr2_samples(curve, cfg)?;
    if samples.iter().any(|(_, m)| *m <= 0.0) {
        return Ok(0.0);
    }
    let mean_log = samples.iter().map(|(_, m)| m.ln()).sum::<f64>() / samples.len() as f64;
    Ok(100.0 * mean_log.exp())
}

/// Miss rate (percent) at a fixed FPPI for each NMS threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub fppi_point: f64,
    pub thresholds: Vec<f64>,
    pub miss_rates: Vec<f64>,
    pub mean: f64,
    /// Population variance of `miss_rates`.
    pub variance: f64,
}

pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

pub fn nms_sweep(
    images: &[EvalImage],
    thresholds: &[f64],
    fppi_point: f64,
    iou_thresh: f64,
) -> Result<SweepReport> {
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig(
            "NMS sweep needs at least one threshold".into(),
        ));
    }
    if !(fppi_point > 0.0 && fppi_point.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "FPPI point must be positive, got {fppi_point}"
        )));
    }
    let mut miss_rates = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut filtered = Vec::with_capacity(images.len());
        for im in images {
            let boxes: Vec<BBox> = im.dets.iter().map(|d| d.bbox).collect();
            let scores: Vec<f64> = im.dets.iter().map(|d| d.score).collect();
            let dets = nms_indices(&boxes, &scores, t)?
                .into_iter()
                .map(|k| im.dets[k])
                .collect();
            filtered.push(EvalImage {
                id: im.id.clone(),
                gts: im.gts.clone(),
                dets,
            });
        }
        let curve = fppi_missrate_curve(&filtered, iou_thresh)?;
        miss_rates.push(100.0 * curve.miss_rate_at(fppi_point));
    }
    let (mean, variance) = mean_and_variance(&miss_rates);
    Ok(SweepReport {
        fppi_point,
        thresholds: thresholds.to_vec(),
        miss_rates,
        mean,
        variance,
    })
}
