use std::path::{Path, PathBuf};
use std::process::Command;

use crowddet::commands::{
    cmd_eval, cmd_gradcheck, cmd_nms_sweep, cmd_poroi_demo, cmd_synth, fnv1a64, Format, Report,
};
use crowddet::eval::{Detection, Subset};
use crowddet::io::{read_annotations, write_detections, write_feature_map, RunConfig};
use crowddet::poroi::FeatureMap;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/mr2")
        .join(name)
}

/// Values printed by `tests/fixtures/mr2/oracle.py`.
fn oracle_values() -> Vec<(Subset, f64)> {
    std::fs::read_to_string(fixture("expected.txt"))
        .unwrap()
        .lines()
        .map(|l| {
            let (name, v) = l.split_once(' ').unwrap();
            (name.parse().unwrap(), v.parse().unwrap())
        })
        .collect()
}

#[test]
fn fixture_mr2_matches_oracle() {
    let cfg = RunConfig::default();
    let expected = oracle_values();
    assert_eq!(expected.len(), 4);
    for (subset, want) in expected {
        let got = cmd_eval(
            &cfg,
            &fixture("annotations.jsonl"),
            &fixture("detections.csv"),
            subset,
        )
        .unwrap()
        .report
        .mr2;
        assert!((got - want).abs() < 1e-9, "{subset}: {got} vs {want}");
    }
}

#[test]
fn oracle_script_reproduces_frozen_values() {
    // the frozen values are authoritative; rerun the script only if python is around
    let Ok(out) = Command::new("python3")
        .arg(fixture("oracle.py"))
        .arg(fixture(""))
        .output()
    else {
        return;
    };
    if !out.status.success() {
        return;
    }
    let printed = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        printed,
        std::fs::read_to_string(fixture("expected.txt")).unwrap()
    );
}

#[test]
fn synth_is_byte_identical_per_seed_and_round_trips() {
    let cfg = RunConfig::default();
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    let ra = cmd_synth(&cfg, 9, 6, a.path(), true).unwrap();
    cmd_synth(&cfg, 9, 6, b.path(), true).unwrap();
    cmd_synth(&cfg, 10, 6, c.path(), false).unwrap();
    for f in ["annotations.jsonl", "detections.csv", "detections_raw.csv"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    assert_ne!(
        std::fs::read(a.path().join("annotations.jsonl")).unwrap(),
        std::fs::read(c.path().join("annotations.jsonl")).unwrap()
    );
    assert!(!c.path().join("detections.csv").exists());

    let scenes = read_annotations(&ra.annotations).unwrap();
    assert_eq!(scenes.len(), 6);
    assert_eq!(
        scenes.iter().map(|s| s.objects.len()).sum::<usize>(),
        ra.pedestrians
    );
    let text = std::fs::read_to_string(&ra.annotations).unwrap();
    assert_eq!(crowddet::io::format_annotations(&scenes), text);

    let report = cmd_eval(
        &cfg,
        &ra.annotations,
        ra.detections.as_ref().unwrap(),
        Subset::Reasonable,
    )
    .unwrap();
    assert!((0.0..=100.0).contains(&report.report.mr2));
}

fn perfect_detections(annotations: &Path, out: &Path) {
    let dets: Vec<Detection> = read_annotations(annotations)
        .unwrap()
        .iter()
        .flat_map(|s| {
            s.objects
                .iter()
                .filter(|o| !o.ignore)
                .map(|o| Detection::new(s.id.clone(), o.full, 1.0).unwrap())
        })
        .collect();
    write_detections(out, &dets).unwrap();
}

#[test]
fn perfect_and_empty_detections() {
    let cfg = RunConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let ann = cmd_synth(&cfg, 3, 8, dir.path(), false)
        .unwrap()
        .annotations;
    let perfect = dir.path().join("perfect.csv");
    perfect_detections(&ann, &perfect);
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    for subset in Subset::ALL {
        let Ok(r) = cmd_eval(&cfg, &ann, &perfect, subset) else {
            continue; // a subset can be empty on a small synthetic set
        };
        assert_eq!(r.report.mr2, 0.0, "{subset}");
        assert_eq!(
            cmd_eval(&cfg, &ann, &empty, subset).unwrap().report.mr2,
            100.0
        );
    }
    // without crowded pairs, perfect detections are disjoint and NMS never
    // touches them: flat series
    let mut sparse = cfg.clone();
    sparse.bench.scene.pair_prob = 0.0;
    let d2 = tempfile::tempdir().unwrap();
    let ann = cmd_synth(&sparse, 3, 8, d2.path(), false)
        .unwrap()
        .annotations;
    perfect_detections(&ann, &perfect);
    let sweep = cmd_nms_sweep(&cfg, &ann, &perfect, Subset::Reasonable, None).unwrap();
    assert!(sweep.report.miss_rates.iter().all(|m| *m == 0.0));
    assert_eq!(sweep.report.variance, 0.0);
}

#[test]
fn nms_sweep_on_fixture() {
    let cfg = RunConfig::default();
    let (ann, det) = (fixture("annotations.jsonl"), fixture("detections.csv"));
    let single = cmd_nms_sweep(&cfg, &ann, &det, Subset::Reasonable, Some(&[0.5])).unwrap();
    assert_eq!(single.report.variance, 0.0);
    // the duplicate in the first image survives NMS only at high thresholds
    let sweep = cmd_nms_sweep(&cfg, &ann, &det, Subset::Reasonable, None).unwrap();
    assert!(sweep.report.variance > 0.0, "{:?}", sweep.report);
}

#[test]
fn eval_rejects_bad_inputs_with_locations() {
    let cfg = RunConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let det = dir.path().join("d.csv");
    std::fs::write(&det, "street-1,1,2,3,4,0.5\nstreet-9,1,2,3,4,0.5\n").unwrap();
    let err = cmd_eval(
        &cfg,
        &fixture("annotations.jsonl"),
        &det,
        Subset::Reasonable,
    )
    .unwrap_err();
    assert!(err.to_string().contains("street-9"), "{err}");

    std::fs::write(&det, "street-1,1,2,3,4,0.5\nstreet-1,1,2,3,4\n").unwrap();
    let err = cmd_eval(
        &cfg,
        &fixture("annotations.jsonl"),
        &det,
        Subset::Reasonable,
    )
    .unwrap_err();
    assert!(err.to_string().contains("d.csv:2:"), "{err}");

    let ann = dir.path().join("a.jsonl");
    std::fs::write(&ann, "{\"id\":\"x\",\"width\":10,\"height\":10,\"objects\":[{\"bbox\":[0,0,5,5],\"vis_bbox\":[0,0,6,5]}]}\n").unwrap();
    let err = cmd_eval(&cfg, &ann, &det, Subset::Reasonable)
        .unwrap_err()
        .to_string();
    assert!(
        err.contains("a.jsonl:1:") && err.contains("vis_bbox"),
        "{err}"
    );

    assert!("crowded".parse::<Subset>().is_err());
}

#[test]
fn gradcheck_command() {
    let cfg = RunConfig::default();
    let ok = cmd_gradcheck(&cfg, 1, Some(2), false).unwrap();
    assert!(ok.passed());
    let table = ok.render(Format::Table);
    for loss in ["cls", "reg", "com", "agg", "rpn", "occ", "frc"] {
        assert!(
            table.lines().any(|l| l.starts_with(loss)),
            "{loss} missing:\n{table}"
        );
    }
    assert!(!cmd_gradcheck(&cfg, 1, Some(1), true).unwrap().passed());
}

fn constant_map(path: &Path, c: usize, value: f64) {
    let map = FeatureMap::new(c, 20, 16, 1.0 / 16.0, vec![value; c * 20 * 16]).unwrap();
    write_feature_map(path, &map).unwrap();
}

#[test]
fn poroi_demo_checksums() {
    let mut cfg = RunConfig::default();
    cfg.defaults.occ_hidden = [8, 4];
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("f.fmap");
    let data: Vec<f64> = (0..4 * 20 * 16)
        .map(|i| ((i * 37 % 101) as f64) / 50.0 - 1.0)
        .collect();
    write_feature_map(&f, &FeatureMap::new(4, 20, 16, 1.0 / 16.0, data).unwrap()).unwrap();
    let proposal = [40.0, 16.0, 90.0, 220.0];

    let a = cmd_poroi_demo(&cfg, &f, proposal, 5, false).unwrap();
    let b = cmd_poroi_demo(&cfg, &f, proposal, 5, false).unwrap();
    assert_eq!(a.scores, b.scores);
    assert_eq!(a.combined_checksum, b.combined_checksum);
    assert!(a.scores.iter().all(|o| (0.0..=1.0).contains(o)));

    let fixed = cmd_poroi_demo(&cfg, &f, proposal, 5, true).unwrap();
    assert_eq!(fixed.scores, [1.0; 5]);
    assert_eq!(
        fixed.ablation_checksum.as_deref(),
        Some(fixed.combined_checksum.as_str())
    );
    assert!(fixed.passed());

    // constant map c: every pooled value is c, so with fixed scores every
    // combined value is 6c; an all-zero map gives visibility exactly 0.5
    let k = dir.path().join("k.fmap");
    constant_map(&k, 4, 0.25);
    let r = cmd_poroi_demo(&cfg, &k, proposal, 5, true).unwrap();
    assert_eq!(
        r.combined_checksum,
        format!("{:016x}", fnv1a64(&vec![1.5; 4 * 7 * 7]))
    );
    constant_map(&k, 4, 0.0);
    assert_eq!(
        cmd_poroi_demo(&cfg, &k, proposal, 5, false).unwrap().scores,
        [0.5; 5]
    );

    // proposal outside the map is a diagnostic, not a panic
    assert!(cmd_poroi_demo(&cfg, &f, [5000.0, 5000.0, 10.0, 10.0], 5, false).is_err());
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_crowddet");
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| Command::new(bin).args(args).output().unwrap();

    let out = run(&["gradcheck", "--batches", "1", "--format", "json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 8);

    assert_eq!(
        run(&["gradcheck", "--batches", "1", "--corrupt-gradient"])
            .status
            .code(),
        Some(1)
    );

    let d = dir.path().to_str().unwrap();
    assert!(run(&["synth", "--count", "2", "--seed", "4", "--out", d])
        .status
        .success());
    let ann = dir.path().join("annotations.jsonl");
    let det = fixture("detections.csv");
    let out = run(&[
        "eval",
        "--annotations",
        ann.to_str().unwrap(),
        "--detections",
        det.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "unknown image ids must fail");

    let out = run(&[
        "eval",
        "--annotations",
        fixture("annotations.jsonl").to_str().unwrap(),
        "--detections",
        det.to_str().unwrap(),
        "--subset",
        "heavy",
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("MR-2"));

    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[defaults]\nbogus = 1\n").unwrap();
    let out = run(&["gradcheck", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("c.toml:2"));
}

#[test]
fn shipped_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("config/default.toml");
    let cfg = RunConfig::load(&path).unwrap();
    assert_eq!(cfg.to_toml(), RunConfig::default().to_toml());
}
