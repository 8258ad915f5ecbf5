//! Tiles anchors over an image, densifies the small ones and matches them to
//! two overlapping pedestrians. Prints the label counts and the
//! aggregation groups (anchors sharing a ground truth).

use crowddet::geometry::{
    build_aggregation_groups, match_anchors, AnchorConfig, BBox, GtObject, MatchConfig,
};

fn main() -> crowddet::Result<()> {
    let anchors = AnchorConfig::default().build(320.0, 240.0)?;
    println!("{} anchors after densification", anchors.len());

    // two pedestrians side by side, IoU around 0.4
    let gts = vec![
        GtObject::fully_visible(BBox::from_xywh(100.0, 60.0, 41.0, 100.0)?)?,
        GtObject::fully_visible(BBox::from_xywh(118.0, 64.0, 40.0, 98.0)?)?,
    ];
    let m = match_anchors(&anchors.anchors, &gts, &MatchConfig::default())?;
    println!(
        "positive {}, negative {}, ignored {}",
        m.num_positive(),
        m.num_negative(),
        anchors.len() - m.num_positive() - m.num_negative()
    );

    let groups = build_aggregation_groups(&m);
    for g in &groups.groups {
        let t = g.target;
        println!(
            "gt {}: {} anchors, mean target ({:.3}, {:.3}, {:.3}, {:.3})",
            g.gt_index,
            g.members.len(),
            t.tx,
            t.ty,
            t.tw,
            t.th
        );
    }
    Ok(())
}
