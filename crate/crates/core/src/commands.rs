//! The command-line operations as library functions. Each returns a
//! serializable report that renders as JSON or as a plain-text table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{
    evaluate, nms, nms_sweep, subset_filter, Detection, EvalImage, EvalReport, Subset, SweepReport,
};
use crate::geometry::BBox;
use crate::io::{
    join_images, read_annotations, read_detections, read_feature_map, write_annotations,
    write_detections, RunConfig,
};
use crate::loss::{
    agg_loss, cls_loss, com_loss, frc_loss, grad_check, occ_loss, random_batch, random_occlusion,
    reg_loss, rpn_loss, DiffScalar, LossBatch, LossConfig, NUM_PARTS,
};
use crate::poroi::{
    occlusion_unit_backward, occlusion_unit_forward, poroi_forward_with_scores,
    OcclusionUnitConfig, OcclusionUnitParams, PooledFeature,
};
use crate::synth::{
    generate_scenes, run_fig2b_experiment, scene_anchors, train_toy_regressor, Fig2bReport,
    LossVariant, SceneConfig, ToyHyperParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Table,
    Json,
}

pub trait Report: Serialize {
    fn table(&self) -> String;

    /// Whether the command met its own acceptance condition.
    fn passed(&self) -> bool {
        true
    }

    fn render(&self, format: Format) -> String {
        match format {
            Format::Table => self.table(),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
                s.push('\n');
                s
            }
        }
    }
}

fn load_images(annotations: &Path, detections: &Path) -> Result<Vec<EvalImage>> {
    let scenes = read_annotations(annotations)?;
    let dets = read_detections(detections)?;
    join_images(&scenes, &dets, detections)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutput {
    pub annotations: PathBuf,
    pub detections: PathBuf,
    #[serde(flatten)]
    pub report: EvalReport,
}

impl Report for EvalOutput {
    fn table(&self) -> String {
        let r = &self.report;
        let mut s = String::new();
        writeln!(s, "subset      {}", r.subset).unwrap();
        writeln!(s, "images      {}", r.num_images).unwrap();
        writeln!(s, "pedestrians {}", r.num_gt).unwrap();
        writeln!(s, "MR-2        {:.2}%", r.mr2).unwrap();
        writeln!(s, "{:>10}  {:>9}", "fppi", "miss rate").unwrap();
        for (f, m) in &r.samples {
            writeln!(s, "{f:>10.4}  {:>8.2}%", 100.0 * m).unwrap();
        }
        s
    }
}

pub fn cmd_eval(
    cfg: &RunConfig,
    annotations: &Path,
    detections: &Path,
    subset: Subset,
) -> Result<EvalOutput> {
    cfg.validate()?;
    let images = load_images(annotations, detections)?;
    let report = evaluate(&images, subset, cfg.defaults.match_iou, &cfg.defaults.mr2())?;
    Ok(EvalOutput {
        annotations: annotations.to_path_buf(),
        detections: detections.to_path_buf(),
        report,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutput {
    pub subset: Subset,
    #[serde(flatten)]
    pub report: SweepReport,
}

impl Report for SweepOutput {
    fn table(&self) -> String {
        let r = &self.report;
        let mut s = String::new();
        writeln!(
            s,
            "subset {}, miss rate at FPPI {}",
            self.subset, r.fppi_point
        )
        .unwrap();
        writeln!(s, "{:>9}  {:>9}", "nms", "miss rate").unwrap();
        for (t, m) in r.thresholds.iter().zip(&r.miss_rates) {
            writeln!(s, "{t:>9.2}  {m:>8.2}%").unwrap();
        }
        writeln!(s, "mean     {:.3}", r.mean).unwrap();
        writeln!(s, "variance {:.3}", r.variance).unwrap();
        s
    }
}

/// Miss rate at the configured FPPI after NMS at each threshold; `None`
/// uses the configured list.
pub fn cmd_nms_sweep(
    cfg: &RunConfig,
    annotations: &Path,
    detections: &Path,
    subset: Subset,
    thresholds: Option<&[f64]>,
) -> Result<SweepOutput> {
    cfg.validate()?;
    let spec = subset.spec();
    let images: Vec<EvalImage> = load_images(annotations, detections)?
        .into_iter()
        .map(|im| EvalImage {
            gts: subset_filter(&im.gts, &spec),
            ..im
        })
        .collect();
    let d = &cfg.defaults;
    let report = nms_sweep(
        &images,
        thresholds.unwrap_or(&d.nms_thresholds),
        d.fppi_point,
        d.match_iou,
    )?;
    Ok(SweepOutput { subset, report })
}

#[derive(Debug, Clone, Serialize)]
pub struct GradRow {
    pub loss: String,
    pub max_rel_error: f64,
    pub worst_batch: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub batches: usize,
    pub tolerance: f64,
    pub rows: Vec<GradRow>,
}

impl Report for GradcheckReport {
    fn table(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{} batches, seed {}, tolerance {:e}",
            self.batches, self.seed, self.tolerance
        )
        .unwrap();
        writeln!(s, "{:<8} {:>14}  result", "loss", "max rel err").unwrap();
        for r in &self.rows {
            let verdict = if r.passed { "ok" } else { "FAIL" };
            writeln!(s, "{:<8} {:>14.3e}  {verdict}", r.loss, r.max_rel_error).unwrap();
        }
        s
    }

    fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }
}

fn unflatten(p: &[f64]) -> Vec<[f64; NUM_PARTS]> {
    p.chunks_exact(NUM_PARTS)
        .map(|c| std::array::from_fn(|j| c[j]))
        .collect()
}

/// A small occlusion unit scoring five random parts, with the occlusion
/// log loss as a function of the unit's parameters.
fn unit_loss(
    cfg: &OcclusionUnitConfig,
    parts: &[PooledFeature],
    targets: &[[bool; NUM_PARTS]],
    flat: &[f64],
) -> Result<DiffScalar> {
    let params = OcclusionUnitParams::from_flat(cfg, flat)?;
    let mut scores = [0.0; NUM_PARTS];
    for (o, p) in scores.iter_mut().zip(parts) {
        *o = occlusion_unit_forward(p, &params)?;
    }
    let occ = occ_loss(&[scores], targets, Default::default())?;
    let mut grad = vec![0.0; flat.len()];
    for (j, p) in parts.iter().enumerate() {
        let g = occlusion_unit_backward(p, &params, occ.grad[j])?;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    Ok(DiffScalar {
        value: occ.value,
        grad,
    })
}

/// Finite-difference check of every loss on `batches` seeded random
/// batches. `corrupt` perturbs the analytic gradients, as a negative control.
pub fn cmd_gradcheck(
    cfg: &RunConfig,
    seed: u64,
    batches: Option<usize>,
    corrupt: bool,
) -> Result<GradcheckReport> {
    cfg.validate()?;
    let d = &cfg.defaults;
    let batches = batches.unwrap_or(d.gradcheck_batches);
    let loss_cfg = d.loss();
    let names = ["cls", "reg", "com", "agg", "rpn", "occ", "frc", "occ_unit"];
    let mut rows: Vec<GradRow> = names
        .iter()
        .map(|n| GradRow {
            loss: n.to_string(),
            max_rel_error: 0.0,
            worst_batch: 0,
            passed: true,
        })
        .collect();
    let unit_cfg = OcclusionUnitConfig {
        in_channels: 3,
        hidden: [4, 3],
        pooled_h: 3,
        pooled_w: 3,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in 0..batches {
        let batch = random_batch(&mut rng, d.gradcheck_anchors);
        let (occ_s, occ_t) = random_occlusion(&mut rng, 3);
        let occ_flat: Vec<f64> = occ_s.iter().flatten().copied().collect();
        let unit = OcclusionUnitParams::init(&unit_cfg, rng.random())?;
        let parts: Vec<PooledFeature> = (0..NUM_PARTS)
            .map(|_| {
                let data = (0..27).map(|_| rng.random_range(-1.0..1.0)).collect();
                PooledFeature::new(3, 3, 3, data)
            })
            .collect::<Result<_>>()?;
        let unit_targets = [std::array::from_fn(|_| rng.random_bool(0.5))];

        let tamper = |mut v: DiffScalar| {
            if corrupt {
                if let Some(g) = v.grad.first_mut() {
                    *g += 0.1 * g.abs().max(1.0);
                }
            }
            v
        };
        type BatchLoss = fn(&LossBatch, &LossConfig) -> Result<DiffScalar>;
        let batch_losses: [BatchLoss; 5] = [
            |b, _| cls_loss(b),
            |b, _| reg_loss(b),
            |b, _| com_loss(b),
            agg_loss,
            rpn_loss,
        ];
        let mut outcomes = Vec::with_capacity(names.len());
        let params = batch.params();
        for loss in batch_losses {
            outcomes.push(grad_check(
                |p| loss(&batch.with_params(p)?, &loss_cfg).map(tamper),
                &params,
                d.gradcheck_step,
                d.gradcheck_tolerance,
            )?);
        }
        outcomes.push(grad_check(
            |p| occ_loss(&unflatten(p), &occ_t, loss_cfg.occ_reduction).map(tamper),
            &occ_flat,
            d.gradcheck_step,
            d.gradcheck_tolerance,
        )?);
        let n = params.len();
        let joint: Vec<f64> = params.iter().chain(&occ_flat).copied().collect();
        outcomes.push(grad_check(
            |p| {
                frc_loss(
                    &batch.with_params(&p[..n])?,
                    &unflatten(&p[n..]),
                    &occ_t,
                    &loss_cfg,
                )
                .map(tamper)
            },
            &joint,
            d.gradcheck_step,
            d.gradcheck_tolerance,
        )?);
        outcomes.push(grad_check(
            |p| unit_loss(&unit_cfg, &parts, &unit_targets, p).map(tamper),
            &unit.to_flat(),
            d.gradcheck_step,
            d.gradcheck_tolerance,
        )?);

        for (row, out) in rows.iter_mut().zip(outcomes) {
            if out.max_rel_error > row.max_rel_error || out.max_rel_error.is_nan() {
                row.max_rel_error = out.max_rel_error;
                row.worst_batch = b;
            }
            row.passed &= out.passed;
        }
    }
    Ok(GradcheckReport {
        seed,
        batches,
        tolerance: d.gradcheck_tolerance,
        rows,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthOutput {
    pub seed: u64,
    pub images: usize,
    pub pedestrians: usize,
    pub annotations: PathBuf,
    /// Final detections, after NMS at the configured threshold.
    pub detections: Option<PathBuf>,
    /// The same detector's output before NMS, for threshold sweeps.
    pub raw_detections: Option<PathBuf>,
}

impl Report for SynthOutput {
    fn table(&self) -> String {
        let mut s = format!(
            "seed {}: {} images, {} pedestrians\nannotations {}\n",
            self.seed,
            self.images,
            self.pedestrians,
            self.annotations.display()
        );
        if let (Some(d), Some(r)) = (&self.detections, &self.raw_detections) {
            writeln!(
                s,
                "detections  {}\nraw         {}",
                d.display(),
                r.display()
            )
            .unwrap();
        }
        s
    }
}

/// Writes `count` seeded scenes to `out_dir/annotations.jsonl`. With
/// `with_detections`, also trains the AggLoss toy head on separate scenes
/// and writes its detections before NMS to `out_dir/detections_raw.csv`
/// and after NMS to `out_dir/detections.csv`.
pub fn cmd_synth(
    cfg: &RunConfig,
    seed: u64,
    count: usize,
    out_dir: &Path,
    with_detections: bool,
) -> Result<SynthOutput> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::InvalidConfig("synth: count must be positive".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let bench = &cfg.bench;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene_cfg = SceneConfig {
        seed: rng.random(),
        ..bench.scene.clone()
    };
    let scenes = generate_scenes(&scene_cfg, count, &format!("s{seed}-"))?;
    let annotations = out_dir.join("annotations.jsonl");
    write_annotations(&annotations, &scenes)?;

    let (detections, raw_detections) = if with_detections {
        let train_cfg = SceneConfig {
            seed: rng.random(),
            ..bench.scene.clone()
        };
        let hp = ToyHyperParams {
            seed: rng.random(),
            ..bench.training
        };
        let train = generate_scenes(&train_cfg, bench.train_scenes, "train-")?;
        let model = train_toy_regressor(
            &train,
            LossVariant::AggLoss,
            &bench.anchors,
            &bench.matching,
            &bench.features,
            &hp,
        )?;
        let mut raw = Vec::new();
        for s in &scenes {
            let sa = scene_anchors(
                s,
                &bench.anchors,
                &bench.matching,
                &bench.features,
                rng.random(),
            )?;
            for b in model.detect(s, &sa, bench.min_score, bench.top_k)? {
                raw.push(Detection::new(s.id.clone(), b.bbox, b.score)?);
            }
        }
        let kept = nms(&raw, cfg.defaults.nms_thresh)?;
        let (final_path, raw_path) = (
            out_dir.join("detections.csv"),
            out_dir.join("detections_raw.csv"),
        );
        write_detections(&final_path, &kept)?;
        write_detections(&raw_path, &raw)?;
        (Some(final_path), Some(raw_path))
    } else {
        (None, None)
    };
    Ok(SynthOutput {
        seed,
        images: scenes.len(),
        pedestrians: scenes.iter().map(|s| s.objects.len()).sum(),
        annotations,
        detections,
        raw_detections,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Fig2bSummary {
    pub runs: Vec<Fig2bReport>,
    /// Seeds on which AggLoss has the lower miss-rate variance.
    pub variance_wins: usize,
    /// Seeds on which AggLoss has the smaller within-group spread.
    pub spread_wins: usize,
    /// Fraction of seeds that must favour AggLoss.
    pub required_fraction: f64,
}

impl Fig2bSummary {
    pub fn variance_passed(&self) -> bool {
        self.variance_wins as f64 >= self.required_fraction * self.runs.len() as f64
    }

    pub fn spread_passed(&self) -> bool {
        self.spread_wins as f64 >= self.required_fraction * self.runs.len() as f64
    }
}

impl Report for Fig2bSummary {
    fn table(&self) -> String {
        let mut s = String::new();
        let Some(first) = self.runs.first() else {
            return s;
        };
        write!(s, "{:<10}", "nms").unwrap();
        for t in &first.baseline.sweep.thresholds {
            write!(s, "{t:>7.1}").unwrap();
        }
        writeln!(s, "{:>10}{:>9}", "variance", "spread").unwrap();
        for r in &self.runs {
            writeln!(s, "seed {}", r.seed).unwrap();
            for (name, v) in [("baseline", &r.baseline), ("aggloss", &r.aggloss)] {
                write!(s, "  {name:<8}").unwrap();
                for m in &v.sweep.miss_rates {
                    write!(s, "{m:>7.2}").unwrap();
                }
                writeln!(s, "{:>10.2}{:>9.3}", v.sweep.variance, v.spread).unwrap();
            }
            writeln!(
                s,
                "  variance ratio {:.3}, spread ratio {:.3}",
                r.variance_ratio, r.spread_ratio
            )
            .unwrap();
        }
        let n = self.runs.len();
        writeln!(
            s,
            "lower variance with AggLoss on {}/{n} seeds",
            self.variance_wins
        )
        .unwrap();
        writeln!(
            s,
            "smaller spread with AggLoss on {}/{n} seeds",
            self.spread_wins
        )
        .unwrap();
        writeln!(
            s,
            "reference variances (full detectors, real data): aggloss {}, baseline {}",
            first.reference.variance_aggloss, first.reference.variance_baseline
        )
        .unwrap();
        s
    }

    fn passed(&self) -> bool {
        self.variance_passed()
    }
}

/// The NMS-sensitivity comparison over `seeds` (the configured list when
/// `None`).
pub fn cmd_fig2b(cfg: &RunConfig, seeds: Option<&[u64]>) -> Result<Fig2bSummary> {
    cfg.validate()?;
    let seeds = seeds.unwrap_or(&cfg.bench.seeds);
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("fig2b: no seeds".into()));
    }
    let runs = seeds
        .iter()
        .map(|&s| run_fig2b_experiment(&cfg.bench, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Fig2bSummary {
        variance_wins: runs.iter().filter(|r| r.variance_ratio < 1.0).count(),
        spread_wins: runs.iter().filter(|r| r.spread_ratio < 1.0).count(),
        required_fraction: 0.8,
        runs,
    })
}

/// 64-bit FNV-1a over the little-endian bytes of `values`.
pub fn fnv1a64(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, Serialize)]
pub struct PoroiDemoReport {
    pub proposal: [f64; 4],
    pub shape: [usize; 3],
    pub scores: [f64; NUM_PARTS],
    pub fixed_scores: bool,
    pub combined_sum: f64,
    /// FNV-1a of the combined feature, hex.
    pub combined_checksum: String,
    /// With fixed unit scores: FNV-1a of `whole + sum of parts`, computed
    /// separately; equal to `combined_checksum`.
    pub ablation_checksum: Option<String>,
}

impl Report for PoroiDemoReport {
    fn table(&self) -> String {
        let mut s = String::new();
        let [c, h, w] = self.shape;
        writeln!(s, "proposal {:?}, pooled {c}x{h}x{w}", self.proposal).unwrap();
        for (j, o) in self.scores.iter().enumerate() {
            writeln!(s, "part {}  visibility {o:.6}", j + 1).unwrap();
        }
        writeln!(s, "combined sum      {:.9e}", self.combined_sum).unwrap();
        writeln!(s, "combined checksum {}", self.combined_checksum).unwrap();
        if let Some(a) = &self.ablation_checksum {
            writeln!(s, "whole+parts       {a}").unwrap();
        }
        s
    }

    fn passed(&self) -> bool {
        self.ablation_checksum
            .as_ref()
            .is_none_or(|a| *a == self.combined_checksum)
    }
}

/// Pools `proposal` (`[x, y, w, h]`, image pixels) from a feature file,
/// scores its parts with a seeded occlusion unit and combines them.
pub fn cmd_poroi_demo(
    cfg: &RunConfig,
    features: &Path,
    proposal: [f64; 4],
    seed: u64,
    fix_scores_one: bool,
) -> Result<PoroiDemoReport> {
    cfg.validate()?;
    let d = &cfg.defaults;
    let map = read_feature_map(features, d.spatial_scale)?;
    let [x, y, w, h] = proposal;
    let bbox = BBox::from_xywh(x, y, w, h)?;
    let params = OcclusionUnitParams::init(&d.occlusion_unit(map.channels), seed)?;
    let fixed = fix_scores_one.then_some([1.0; NUM_PARTS]);
    let out = poroi_forward_with_scores(
        &map,
        &bbox,
        &d.layout(),
        &params,
        d.pooled_h,
        d.pooled_w,
        fixed,
    )?;
    let ablation_checksum = fix_scores_one.then(|| {
        let mut sum = out.whole.data.clone();
        for p in &out.parts {
            for (a, v) in sum.iter_mut().zip(&p.data) {
                *a += v;
            }
        }
        format!("{:016x}", fnv1a64(&sum))
    });
    let c = &out.combined;
    Ok(PoroiDemoReport {
        proposal,
        shape: [c.channels, c.height, c.width],
        scores: out.scores,
        fixed_scores: fix_scores_one,
        combined_sum: c.data.iter().sum(),
        combined_checksum: format!("{:016x}", fnv1a64(&c.data)),
        ablation_checksum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(&[]), 0xcbf2_9ce4_8422_2325);
        // FNV-1a of eight zero bytes
        assert_eq!(fnv1a64(&[0.0]), 0xa8c7_f832_281a_39c5);
    }

    #[test]
    fn gradcheck_passes_and_negative_control_fails() {
        let cfg = RunConfig::default();
        let ok = cmd_gradcheck(&cfg, 3, Some(3), false).unwrap();
        assert!(ok.passed(), "{}", ok.table());
        assert_eq!(ok.rows.len(), 8);
        let bad = cmd_gradcheck(&cfg, 3, Some(1), true).unwrap();
        assert!(bad.rows.iter().all(|r| !r.passed));
    }
}
