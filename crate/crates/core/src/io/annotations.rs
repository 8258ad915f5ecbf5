use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, GtObject};
use crate::synth::Scene;

/// One line of an annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: String,
    pub width: f64,
    pub height: f64,
    #[serde(default)]
    pub objects: Vec<ObjectRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    /// `[x, y, w, h]` of the full body.
    pub bbox: [f64; 4],
    /// `[x, y, w, h]` of the visible part.
    pub vis_bbox: [f64; 4],
    #[serde(default)]
    pub ignore: u8,
}

impl From<&Scene> for ImageRecord {
    fn from(s: &Scene) -> Self {
        Self {
            id: s.id.clone(),
            width: s.width,
            height: s.height,
            objects: s
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    bbox: o.full.to_xywh(),
                    vis_bbox: o.visible.to_xywh(),
                    ignore: o.ignore as u8,
                })
                .collect(),
        }
    }
}

fn xywh_box(v: [f64; 4], what: &str) -> std::result::Result<BBox, String> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(format!("{what} has a non-finite coordinate"));
    }
    if v[2] < 0.0 || v[3] < 0.0 {
        return Err(format!("{what} has a negative width or height"));
    }
    BBox::from_xywh(v[0], v[1], v[2], v[3]).map_err(|e| format!("{what}: {e}"))
}

fn record_to_scene(r: ImageRecord) -> std::result::Result<Scene, String> {
    if r.id.is_empty() {
        return Err("image id is empty".into());
    }
    if !(r.width > 0.0 && r.width.is_finite() && r.height > 0.0 && r.height.is_finite()) {
        return Err(format!("image {}: width and height must be positive", r.id));
    }
    let mut objects = Vec::with_capacity(r.objects.len());
    for (k, o) in r.objects.into_iter().enumerate() {
        let at = |msg: String| format!("image {} object {k}: {msg}", r.id);
        if o.ignore > 1 {
            return Err(at(format!("ignore must be 0 or 1, got {}", o.ignore)));
        }
        let full = xywh_box(o.bbox, "bbox")
            .map_err(at)?
            .clamp_to(r.width, r.height);
        if full.area() <= 0.0 {
            return Err(at("bbox has no area inside the image".into()));
        }
        let visible = xywh_box(o.vis_bbox, "vis_bbox")
            .map_err(at)?
            .clamp_to(r.width, r.height);
        let gt = GtObject::new(full, visible, o.ignore == 1)
            .map_err(|_| at("vis_bbox is not inside bbox".into()))?;
        objects.push(gt);
    }
    Ok(Scene {
        id: r.id,
        width: r.width,
        height: r.height,
        objects,
    })
}

/// Parses JSON Lines annotations, one image per non-blank line. Boxes are
/// clamped to the image; everything else that is inconsistent is rejected.
pub fn parse_annotations(text: &str, file: &Path) -> Result<Vec<Scene>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::parse(file, n + 1, msg);
        let record: ImageRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let scene = record_to_scene(record).map_err(err)?;
        if !seen.insert(scene.id.clone()) {
            return Err(err(format!("duplicate image id {:?}", scene.id)));
        }
        out.push(scene);
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Vec<Scene>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path)
}

pub fn format_annotations(scenes: &[Scene]) -> String {
    let mut out = String::new();
    for s in scenes {
        let line = serde_json::to_string(&ImageRecord::from(s)).expect("records serialize");
        writeln!(out, "{line}").unwrap();
    }
    out
}

pub fn write_annotations(path: &Path, scenes: &[Scene]) -> Result<()> {
    std::fs::write(path, format_annotations(scenes)).map_err(|e| Error::io(path, e))
}
