//! Part occlusion-aware RoI pooling on a synthetic feature map: the left half
//! of the map is bright, the right half dark. Writes the map in the binary
//! feature format, reads it back and pools a proposal straddling the edge,
//! with predicted visibility scores and with all scores fixed to 1.

use crowddet::commands::fnv1a64;
use crowddet::geometry::BBox;
use crowddet::io::{read_feature_map, write_feature_map};
use crowddet::poroi::{
    default_part_layout, poroi_forward, poroi_forward_with_scores, FeatureMap, OcclusionUnitConfig,
    OcclusionUnitParams,
};

fn main() -> crowddet::Result<()> {
    let (c, h, w) = (8, 24, 32);
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for _y in 0..h {
            for x in 0..w {
                data.push(if x < w / 2 {
                    1.0 + ch as f64 * 0.1
                } else {
                    0.0
                });
            }
        }
    }
    let map = FeatureMap::new(c, h, w, 1.0 / 8.0, data)?;
    let path = std::env::temp_dir().join("crowddet_poroi_unit.fmap");
    write_feature_map(&path, &map)?;
    let map = read_feature_map(&path, 1.0 / 8.0)?;

    let unit_cfg = OcclusionUnitConfig {
        in_channels: c,
        hidden: [16, 8],
        ..OcclusionUnitConfig::default()
    };
    let params = OcclusionUnitParams::init(&unit_cfg, 7)?;
    let proposal = BBox::from_xywh(96.0, 40.0, 64.0, 150.0)?;
    let layout = default_part_layout();

    let out = poroi_forward(&map, &proposal, &layout, &params, 7, 7)?;
    println!("visibility scores {:.4?}", out.scores);
    println!("combined checksum {:016x}", fnv1a64(&out.combined.data));

    let fixed = poroi_forward_with_scores(&map, &proposal, &layout, &params, 7, 7, Some([1.0; 5]))?;
    let mut sum = fixed.whole.data.clone();
    for p in &fixed.parts {
        sum.iter_mut().zip(&p.data).for_each(|(a, v)| *a += v);
    }
    println!(
        "scores fixed to 1: {:016x}, whole + parts: {:016x}",
        fnv1a64(&fixed.combined.data),
        fnv1a64(&sum)
    );
    std::fs::remove_file(&path).ok();
    Ok(())
}
