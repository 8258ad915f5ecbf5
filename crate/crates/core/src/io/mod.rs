//! File formats: JSON Lines annotations, CSV detections, a little-endian
//! binary feature-map format and the TOML run configuration.

mod annotations;
mod config;
mod detections;
mod featuremap;

pub use annotations::{
    format_annotations, parse_annotations, read_annotations, write_annotations, ImageRecord,
    ObjectRecord,
};
pub use config::{Defaults, RunConfig};
pub use detections::{
    format_detections, join_images, parse_detections, read_detections, write_detections,
};
pub use featuremap::{
    decode_feature_map, encode_feature_map, read_feature_map, write_feature_map, FEATURE_MAGIC,
};
