use std::path::Path;

use crate::error::{Error, Result};
use crate::poroi::FeatureMap;

/// File layout: this magic, then `C`, `H`, `W` as little-endian `u32`, then
/// `C * H * W` little-endian `f64` values, channel-major.
pub const FEATURE_MAGIC: &[u8; 8] = b"CRWDFMAP";

const HEADER_LEN: usize = 8 + 3 * 4;

pub fn encode_feature_map(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * map.data.len());
    out.extend_from_slice(FEATURE_MAGIC);
    for d in [map.channels, map.height, map.width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &map.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a feature file. `spatial_scale` is not stored and comes from the
/// caller's configuration.
pub fn decode_feature_map(bytes: &[u8], spatial_scale: f64, file: &Path) -> Result<FeatureMap> {
    let shape_err = |expected: String, found: String| Error::ShapeMismatch {
        expected: format!("{}: {expected}", file.display()),
        found,
    };
    if bytes.len() < HEADER_LEN || &bytes[..8] != FEATURE_MAGIC {
        return Err(shape_err(
            "feature map header".into(),
            format!("{} bytes without the expected magic", bytes.len()),
        ));
    }
    let dim =
        |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().unwrap()) as usize;
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let body = &bytes[HEADER_LEN..];
    let expected = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| shape_err("addressable dimensions".into(), format!("{c}x{h}x{w}")))?;
    if body.len() != expected {
        return Err(shape_err(
            format!("{expected} data bytes for {c}x{h}x{w}"),
            format!("{}", body.len()),
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    FeatureMap::new(c, h, w, spatial_scale, data)
}

pub fn read_feature_map(path: &Path, spatial_scale: f64) -> Result<FeatureMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_map(&bytes, spatial_scale, path)
}

pub fn write_feature_map(path: &Path, map: &FeatureMap) -> Result<()> {
    std::fs::write(path, encode_feature_map(map)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let data: Vec<f64> = (0..24)
            .map(|i| (i as f64).sin() * 1e-300 + i as f64 / 7.0)
            .collect();
        let map = FeatureMap::new(2, 3, 4, 0.5, data).unwrap();
        let bytes = encode_feature_map(&map);
        assert_eq!(bytes.len(), 20 + 24 * 8);
        assert_eq!(&bytes[8..12], &[2, 0, 0, 0]);
        let back = decode_feature_map(&bytes, 0.5, Path::new("f.bin")).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn rejects_bad_files() {
        let map = FeatureMap::new(1, 2, 2, 1.0, vec![1.0; 4]).unwrap();
        let bytes = encode_feature_map(&map);
        let p = Path::new("f.bin");
        assert!(decode_feature_map(&bytes[..bytes.len() - 1], 1.0, p).is_err());
        assert!(decode_feature_map(&bytes[..10], 1.0, p).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_feature_map(&wrong, 1.0, p).is_err());
        let mut nan = bytes;
        nan[20..28].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_feature_map(&nan, 1.0, p).is_err());
    }
}
