use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{Detection, EvalImage};
use crate::geometry::BBox;
use crate::synth::Scene;

const HEADER: [&str; 6] = ["image_id", "x", "y", "w", "h", "score"];

fn field_f64(fields: &[&str], i: usize) -> std::result::Result<f64, String> {
    let raw = fields[i];
    let v: f64 = raw
        .parse()
        .map_err(|_| format!("{} {raw:?} is not a number", HEADER[i]))?;
    if !v.is_finite() {
        return Err(format!("{} {raw:?} is not finite", HEADER[i]));
    }
    Ok(v)
}

/// Parses `image_id,x,y,w,h,score` rows (no quoting; blank lines and `#`
/// comments skipped). A first row equal to the column names is a header.
pub fn parse_detections(text: &str, file: &Path) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    let mut first = true;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::parse(file, n + 1, msg);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if std::mem::take(&mut first) && fields == HEADER {
            continue;
        }
        if fields.len() != HEADER.len() {
            return Err(err(format!(
                "expected {} fields, found {}",
                HEADER.len(),
                fields.len()
            )));
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(err("image_id is empty".into()));
        }
        let mut v = [0.0; 5];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = field_f64(&fields, k + 1).map_err(err)?;
        }
        let [x, y, w, h, score] = v;
        if w < 0.0 || h < 0.0 {
            return Err(err("negative width or height".into()));
        }
        let bbox = BBox::from_xywh(x, y, w, h).map_err(|e| err(e.to_string()))?;
        out.push(Detection::new(id, bbox, score).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, path)
}

/// Image ids must not contain commas or line breaks.
pub fn format_detections(dets: &[Detection]) -> String {
    let mut out = HEADER.join(",");
    out.push('\n');
    for d in dets {
        let [x, y, w, h] = d.bbox.to_xywh();
        writeln!(out, "{},{x},{y},{w},{h},{}", d.image_id, d.score).unwrap();
    }
    out
}

pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    if let Some(d) = dets.iter().find(|d| d.image_id.contains([',', '\n', '\r'])) {
        return Err(Error::InvalidConfig(format!(
            "image id {:?} cannot be written as a detection row",
            d.image_id
        )));
    }
    std::fs::write(path, format_detections(dets)).map_err(|e| Error::io(path, e))
}

/// Pairs detections with their images. Every detection must name an
/// annotated image; images without detections get an empty list.
pub fn join_images(
    scenes: &[Scene],
    dets: &[Detection],
    det_file: &Path,
) -> Result<Vec<EvalImage>> {
    let ids: HashSet<&str> = scenes.iter().map(|s| s.id.as_str()).collect();
    let mut by_image: HashMap<&str, Vec<_>> = HashMap::new();
    for (k, d) in dets.iter().enumerate() {
        if !ids.contains(d.image_id.as_str()) {
            return Err(Error::InconsistentBatch(format!(
                "{}: detection {} names image {:?}, which is not annotated",
                det_file.display(),
                k + 1,
                d.image_id
            )));
        }
        by_image
            .entry(d.image_id.as_str())
            .or_default()
            .push(d.scored());
    }
    Ok(scenes
        .iter()
        .map(|s| EvalImage {
            id: s.id.clone(),
            gts: s.objects.clone(),
            dets: by_image.remove(s.id.as_str()).unwrap_or_default(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<Detection>> {
        parse_detections(text, Path::new("d.csv"))
    }

    #[test]
    fn header_is_optional() {
        let with = parse("image_id,x,y,w,h,score\na, 1,2,3,4,0.5\n").unwrap();
        let without = parse("a,1,2,3,4,0.5\n").unwrap();
        assert_eq!(with, without);
        assert_eq!(with[0].bbox.to_array(), [1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let msg = parse("a,1,2,3,4,0.5\nb,1,2,3,4,nan\n")
            .unwrap_err()
            .to_string();
        assert!(
            msg.starts_with("d.csv:2:") && msg.contains("score"),
            "{msg}"
        );
        let msg = parse("a,1,2,3,4,0.5\n\na,1,2,3\n").unwrap_err().to_string();
        assert!(msg.starts_with("d.csv:3:"), "{msg}");
        assert!(parse("a,1,2,-3,4,0.5\n").is_err());
        assert!(parse("a,1,x,3,4,0.5\n").is_err());
    }

    #[test]
    fn round_trip() {
        let dets = vec![
            Detection::new(
                "a",
                BBox::from_xywh(0.1, 0.2, 10.3, 20.7).unwrap(),
                0.123456789,
            )
            .unwrap(),
            Detection::new("b", BBox::from_xywh(5.0, 6.0, 7.0, 8.0).unwrap(), -1.5).unwrap(),
        ];
        let text = format_detections(&dets);
        let back = parse(&text).unwrap();
        assert_eq!(format_detections(&back), text);
        for (a, b) in dets.iter().zip(&back) {
            assert_eq!(a.score, b.score);
            for (u, v) in a.bbox.to_array().iter().zip(b.bbox.to_array()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn join_rejects_unknown_images() {
        let scene = Scene {
            id: "a".into(),
            width: 10.0,
            height: 10.0,
            objects: vec![],
        };
        let dets = parse("a,1,2,3,4,0.5\nz,1,2,3,4,0.5\n").unwrap();
        assert!(join_images(&[scene.clone()], &dets[..1], Path::new("d.csv")).is_ok());
        assert!(join_images(&[scene], &dets, Path::new("d.csv")).is_err());
    }
}
