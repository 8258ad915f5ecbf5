//! Generates a few seeded crowd scenes, prints each pedestrian with its
//! visibility and subset, and writes them as JSON Lines annotations.

use crowddet::eval::{Subset, SubsetSpec};
use crowddet::io::{format_annotations, parse_annotations};
use crowddet::synth::{generate_scenes, SceneConfig};

fn main() -> crowddet::Result<()> {
    let cfg = SceneConfig {
        seed: 2024,
        ..SceneConfig::default()
    };
    let scenes = generate_scenes(&cfg, 3, "demo-")?;
    for s in &scenes {
        println!("{} ({}x{})", s.id, s.width, s.height);
        for o in &s.objects {
            let subset = [Subset::Bare, Subset::Partial, Subset::Heavy]
                .into_iter()
                .find(|&k| SubsetSpec::standard(k).contains(o))
                .map_or("-".to_string(), |k| k.to_string());
            println!(
                "  [{:6.1} {:6.1} {:6.1} {:6.1}]  visible {:4.2}  {subset}",
                o.full.x_min,
                o.full.y_min,
                o.full.x_max,
                o.full.y_max,
                o.visibility()
            );
        }
    }
    let text = format_annotations(&scenes);
    assert_eq!(parse_annotations(&text, "inline".as_ref())?, scenes);
    print!(
        "{}",
        text.lines()
            .next()
            .unwrap_or_default()
            .chars()
            .take(160)
            .collect::<String>()
    );
    println!("...");
    Ok(())
}
