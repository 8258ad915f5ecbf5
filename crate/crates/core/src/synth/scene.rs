use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox, GtObject};

/// Visibility is rasterized on this many cells per side of each full box.
const VIS_GRID: usize = 32;
/// Partner placements tried around one first pedestrian.
const PARTNER_TRIES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub width: f64,
    pub height: f64,
    /// Pedestrian count, drawn uniformly from this inclusive range.
    pub min_pedestrians: usize,
    pub max_pedestrians: usize,
    /// Full-box height, drawn uniformly from this range.
    pub min_height: f64,
    pub max_height: f64,
    /// Width over height of every full box.
    pub aspect_ratio: f64,
    /// Chance that a newly placed pedestrian gets an overlapping partner.
    pub pair_prob: f64,
    /// Partner IoU, drawn uniformly from this range.
    pub pair_iou_min: f64,
    pub pair_iou_max: f64,
    /// Chance that a pedestrian's lower body is hidden by a random occluder.
    pub occluder_prob: f64,
    /// Placement attempts (single pedestrians or pairs) before giving up.
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 512.0,
            height: 384.0,
            min_pedestrians: 4,
            max_pedestrians: 8,
            min_height: 60.0,
            max_height: 160.0,
            aspect_ratio: 0.41,
            pair_prob: 0.7,
            pair_iou_min: 0.3,
            pair_iou_max: 0.6,
            occluder_prob: 0.3,
            max_retries: 500,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("scene: {m}")));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.width > 0.0
            && self.height > 0.0
            && self.width.is_finite()
            && self.height.is_finite())
        {
            return bad("image size must be positive");
        }
        if self.min_pedestrians > self.max_pedestrians {
            return bad("min_pedestrians exceeds max_pedestrians");
        }
        if !(self.min_height > 0.0 && self.min_height <= self.max_height) {
            return bad("height range must be positive and ordered");
        }
        if !(self.aspect_ratio > 0.0) {
            return bad("aspect ratio must be positive");
        }
        if self.max_height > self.height || self.max_height * self.aspect_ratio > self.width {
            return bad("largest pedestrian does not fit in the image");
        }
        if !prob(self.pair_prob) || !prob(self.occluder_prob) {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(self.pair_iou_min > 0.0
            && self.pair_iou_min <= self.pair_iou_max
            && self.pair_iou_max < 1.0)
        {
            return bad("pair IoU range must satisfy 0 < min <= max < 1");
        }
        if self.max_retries == 0 {
            return bad("max_retries must be positive");
        }
        Ok(())
    }

    /// Mean of the configured partner IoU distribution.
    pub fn mean_pair_iou(&self) -> f64 {
        0.5 * (self.pair_iou_min + self.pair_iou_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<GtObject>,
}

fn overlaps_any(b: &BBox, placed: &[BBox], except: Option<usize>) -> bool {
    placed
        .iter()
        .enumerate()
        .any(|(k, p)| Some(k) != except && b.intersection_area(p) > 0.0)
}

/// Coordinates are kept on a dyadic grid so that `[x, y, w, h]` text
/// round trips (and visible-region cell edges) are exact.
const COORD_QUANTUM: f64 = 1.0 / 16.0;

fn snap(b: &BBox) -> BBox {
    let q = |v: f64| (v / COORD_QUANTUM).round() * COORD_QUANTUM;
    BBox {
        x_min: q(b.x_min),
        y_min: q(b.y_min),
        x_max: q(b.x_max),
        y_max: q(b.y_max),
    }
}

fn inside(b: &BBox, w: f64, h: f64) -> bool {
    b.x_min >= 0.0 && b.y_min >= 0.0 && b.x_max <= w && b.y_max <= h
}

/// Horizontal center offset at which `partner` (centered on `first` at
/// offset 0) reaches IoU `target`, or `None` if even full alignment falls
/// short. IoU is non-increasing in the offset, so bisection applies.
fn offset_for_iou(first: &BBox, width: f64, height: f64, bottom: f64, target: f64) -> Option<f64> {
    let (cx, _) = first.center();
    let at = |dx: f64| {
        let b = BBox {
            x_min: cx + dx - width / 2.0,
            y_min: bottom - height,
            x_max: cx + dx + width / 2.0,
            y_max: bottom,
        };
        iou(first, &b)
    };
    if at(0.0) < target {
        return None;
    }
    let (mut lo, mut hi) = (0.0, 0.5 * (first.width() + width));
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if at(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// Bounding box of the cells of `full` whose centers are not covered by any
/// occluder; a zero-area box at the top-left corner if none remain.
fn visible_region(full: &BBox, occluders: &[BBox]) -> BBox {
    let (w, h) = (full.width(), full.height());
    let edge_x = |k: usize| {
        if k == VIS_GRID {
            full.x_max
        } else {
            full.x_min + w * k as f64 / VIS_GRID as f64
        }
    };
    let edge_y = |k: usize| {
        if k == VIS_GRID {
            full.y_max
        } else {
            full.y_min + h * k as f64 / VIS_GRID as f64
        }
    };
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for gy in 0..VIS_GRID {
        let cy = full.y_min + h * (gy as f64 + 0.5) / VIS_GRID as f64;
        for gx in 0..VIS_GRID {
            let cx = full.x_min + w * (gx as f64 + 0.5) / VIS_GRID as f64;
            let hidden = occluders
                .iter()
                .any(|o| cx > o.x_min && cx < o.x_max && cy > o.y_min && cy < o.y_max);
            if !hidden {
                bounds = Some(match bounds {
                    None => (gx, gy, gx, gy),
                    Some((a, b, c, d)) => (a.min(gx), b.min(gy), c.max(gx), d.max(gy)),
                });
            }
        }
    }
    match bounds {
        Some((x0, y0, x1, y1)) => BBox {
            x_min: edge_x(x0),
            y_min: edge_y(y0),
            x_max: edge_x(x1 + 1),
            y_max: edge_y(y1 + 1),
        },
        None => BBox {
            x_min: full.x_min,
            y_min: full.y_min,
            x_max: full.x_min,
            y_max: full.y_min,
        },
    }
}

/// Pedestrians whose only overlaps are with their designated partner.
/// Visible boxes subtract nearer pedestrians (larger `y_max`) and random
/// lower-body occluders.
pub fn generate_crowd_scene(cfg: &SceneConfig) -> Result<Vec<GtObject>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let count = rng.random_range(cfg.min_pedestrians..=cfg.max_pedestrians);
    let mut placed: Vec<BBox> = Vec::with_capacity(count);

    let place_single = |rng: &mut ChaCha8Rng, placed: &[BBox]| -> Option<BBox> {
        let h = rng.random_range(cfg.min_height..=cfg.max_height);
        let w = cfg.aspect_ratio * h;
        let x = rng.random_range(0.0..=cfg.width - w);
        let y = rng.random_range(0.0..=cfg.height - h);
        let b = BBox::from_xywh(x, y, w, h).ok()?;
        (!overlaps_any(&b, placed, None)).then_some(b)
    };

    let mut attempts = 0;
    while placed.len() < count {
        attempts += 1;
        if attempts > cfg.max_retries {
            return Err(Error::InfeasibleScene(format!(
                "placed {} of {count} pedestrians in {} attempts",
                placed.len(),
                cfg.max_retries
            )));
        }
        let Some(first) = place_single(&mut rng, &placed) else {
            continue;
        };
        if placed.len() + 1 == count || !rng.random_bool(cfg.pair_prob) {
            placed.push(first);
            continue;
        }
        // a pair is placed as a unit; if no partner fits, the whole pair is retried
        let mut partner = None;
        for _ in 0..PARTNER_TRIES {
            let h =
                (first.height() * rng.random_range(0.9..1.1)).clamp(cfg.min_height, cfg.max_height);
            let w = cfg.aspect_ratio * h;
            let bottom = first.y_max + first.height() * rng.random_range(-0.05..0.05);
            let target = rng.random_range(cfg.pair_iou_min..=cfg.pair_iou_max);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let Some(dx) = offset_for_iou(&first, w, h, bottom, target) else {
                continue;
            };
            let cx = first.center().0 + sign * dx;
            let Ok(b) = BBox::new(cx - w / 2.0, bottom - h, cx + w / 2.0, bottom) else {
                continue;
            };
            if inside(&b, cfg.width, cfg.height) && !overlaps_any(&b, &placed, None) {
                partner = Some(b);
                break;
            }
        }
        if let Some(b) = partner {
            placed.push(first);
            placed.push(b);
        }
    }

    for b in &mut placed {
        *b = snap(b);
    }

    let mut occluders: Vec<Option<BBox>> = Vec::with_capacity(placed.len());
    for b in &placed {
        occluders.push(if rng.random_bool(cfg.occluder_prob) {
            let frac = rng.random_range(0.1..0.6);
            let pad = 0.2 * b.width();
            Some(BBox {
                x_min: b.x_min - pad,
                y_min: b.y_max - frac * b.height(),
                x_max: b.x_max + pad,
                y_max: b.y_max + 1.0,
            })
        } else {
            None
        });
    }

    placed
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let nearer = |j: usize| {
                let (a, c) = (placed[j].y_max, b.y_max);
                a > c || (a == c && j < i)
            };
            let mut occ: Vec<BBox> = (0..placed.len())
                .filter(|&j| j != i && nearer(j))
                .map(|j| placed[j])
                .collect();
            occ.extend(occluders[i]);
            GtObject::new(*b, visible_region(b, &occ), false)
        })
        .collect()
}

/// `count` scenes with per-scene seeds drawn from `base.seed`.
pub fn generate_scenes(base: &SceneConfig, count: usize, prefix: &str) -> Result<Vec<Scene>> {
    let mut rng = ChaCha8Rng::seed_from_u64(base.seed);
    (0..count)
        .map(|k| {
            let cfg = SceneConfig {
                seed: rng.random(),
                ..base.clone()
            };
            Ok(Scene {
                id: format!("{prefix}{k:04}"),
                width: cfg.width,
                height: cfg.height,
                objects: generate_crowd_scene(&cfg)?,
            })
        })
        .collect()
}
