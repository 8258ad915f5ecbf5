//! The RPN aggregation loss on a hand-built batch: three anchors on one
//! pedestrian whose predictions drift apart, then the same batch with the
//! predictions pulled together. The compactness term is what differs.

use crowddet::geometry::{AggregationGroup, AggregationGroups, EncodedDelta};
use crowddet::loss::{rpn_loss_terms, LossBatch, LossConfig};

fn batch(spread: f64) -> crowddet::Result<LossBatch> {
    let target = EncodedDelta::new(0.0, 0.0, 0.0, 0.0);
    // members straddle the target symmetrically, so their mean stays on it
    // only when `spread` is zero
    let deltas = vec![
        EncodedDelta::new(spread, 0.0, 0.0, 0.0),
        EncodedDelta::new(-spread, 0.0, 0.0, 0.0),
        EncodedDelta::new(0.0, 0.5 * spread, 0.0, 0.0),
        EncodedDelta::new(0.0, 0.0, 0.0, 0.0),
    ];
    LossBatch::new(
        vec![0.9, 0.8, 0.85, 0.1],
        deltas,
        vec![true, true, true, false],
        vec![Some(target), Some(target), Some(target), None],
        AggregationGroups {
            groups: vec![AggregationGroup {
                gt_index: 0,
                target,
                members: vec![0, 1, 2],
            }],
        },
    )
}

fn main() -> crowddet::Result<()> {
    for beta in [0.0, 1.0] {
        let cfg = LossConfig {
            beta,
            ..LossConfig::default()
        };
        for spread in [0.0, 0.4, 1.5] {
            let (total, t) = rpn_loss_terms(&batch(spread)?, &cfg)?;
            println!(
                "beta {beta}  spread {spread:3.1}  cls {:.4}  reg {:.4}  com {:.4}  total {:.4}",
                t.cls,
                t.reg,
                t.com.unwrap_or(0.0),
                total.value
            );
        }
    }
    Ok(())
}
