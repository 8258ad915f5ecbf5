//! Baseline vs. compactness-trained toy detector: miss rate at a fixed FPPI
//! across NMS thresholds, for every benchmark seed.

use crowddet::synth::{run_fig2b_experiment, BenchConfig};

fn main() -> crowddet::Result<()> {
    let cfg = BenchConfig::default();
    let mut wins = 0;
    for &seed in &cfg.seeds {
        let r = run_fig2b_experiment(&cfg, seed)?;
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|m| format!("{m:5.1}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        println!("seed {seed:2}");
        println!(
            "  baseline {}  var {:7.3}  spread {:6.2}",
            fmt(&r.baseline.sweep.miss_rates),
            r.baseline.sweep.variance,
            r.baseline.spread
        );
        println!(
            "  aggloss  {}  var {:7.3}  spread {:6.2}",
            fmt(&r.aggloss.sweep.miss_rates),
            r.aggloss.sweep.variance,
            r.aggloss.spread
        );
        println!(
            "  variance ratio {:.3}  spread ratio {:.3}",
            r.variance_ratio, r.spread_ratio
        );
        wins += (r.variance_ratio < 1.0) as usize;
    }
    println!("variance ratio < 1 on {wins}/{} seeds", cfg.seeds.len());
    Ok(())
}
