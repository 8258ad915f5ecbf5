//! Seeded crowded scenes, a linear toy detector head trained with or
//! without the compactness term, and the NMS-sensitivity experiment.

mod fig2b;
mod scene;
mod toy;

pub use fig2b::{
    compare_variants, default_thresholds, run_fig2b_experiment, BenchConfig, Fig2bReport,
    Reference, VariantReport, REFERENCE_VARIANCE_AGGLOSS, REFERENCE_VARIANCE_BASELINE,
};
pub use scene::{generate_crowd_scene, generate_scenes, Scene, SceneConfig};
pub use toy::{
    anchor_features, build_training_set, group_spread, scene_anchors, train_on_set,
    train_toy_regressor, FeatureConfig, Features, LossVariant, SceneAnchors, ToyHyperParams,
    ToyRegressor, TrainingSet, NUM_FEATURES,
};
