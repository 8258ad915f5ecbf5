//! Trains the linear toy head on synthetic crowds with and without the
//! compactness term and reports the loss trace, the crowd-group bias toward
//! neighbours and the within-group spread of decoded boxes.

use crowddet::synth::{
    build_training_set, generate_scenes, group_spread, scene_anchors, train_on_set, BenchConfig,
    LossVariant, SceneConfig,
};

fn main() -> crowddet::Result<()> {
    let cfg = BenchConfig::default();
    let hp = cfg.training;
    let train = generate_scenes(
        &SceneConfig {
            seed: 1,
            ..cfg.scene.clone()
        },
        cfg.train_scenes,
        "t",
    )?;
    let test = generate_scenes(
        &SceneConfig {
            seed: 2,
            ..cfg.scene.clone()
        },
        100,
        "v",
    )?;
    let set = build_training_set(&train, &cfg.anchors, &cfg.matching, &cfg.features, &hp)?;
    println!(
        "{} training anchors, {} groups",
        set.labels.len(),
        set.groups.groups.len()
    );

    for variant in [LossVariant::Baseline, LossVariant::AggLoss] {
        let model = train_on_set(&set, variant, &hp)?;
        let trace = &model.loss_trace;
        let (mut spread, mut n) = (0.0, 0);
        for (k, s) in test.iter().enumerate() {
            let sa = scene_anchors(s, &cfg.anchors, &cfg.matching, &cfg.features, k as u64)?;
            let (a, b) = group_spread(&model, &sa)?;
            spread += a;
            n += b;
        }
        println!(
            "{variant:?}: loss {:.4} -> {:.4} ({} steps), mean group spread {:.3} px",
            trace[0],
            trace[trace.len() - 1],
            trace.len(),
            spread / n.max(1) as f64
        );
    }
    Ok(())
}
