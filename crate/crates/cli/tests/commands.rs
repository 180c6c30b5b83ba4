use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lidarprop::calib::parse_calib;
use lidarprop::cloud_io::{read_kitti_bin, GroundTruthObject};
use lidarprop::clustering::dbscan;
use lidarprop::evaluation::{average_precision, iou, parse_labels, DifficultyTier, FrameRecord};
use lidarprop::preprocess::{downsample, extract_ground, remove_ground};
use lidarprop::proposals::{adjust_ground_line, parse_proposal_lines, validate_cluster, PipelineParams};
use lidarprop_cli::commands::bench::{self, BenchArgs};
use lidarprop_cli::commands::eval::{self, EvalArgs};
use lidarprop_cli::commands::plot::{self, parse_curve_csv, render_svg};
use lidarprop_cli::commands::propose::{self, ProposeArgs};
use lidarprop_cli::commands::synth::{self, SynthArgs};
use lidarprop_cli::commands::Scheme;
use lidarprop_cli::config::{PipelineConfig, DATASET_ROOT_ENV};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lidarprop"));
    c.env_remove(DATASET_ROOT_ENV);
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn cfg_for(root: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.dataset.root = Some(root.to_path_buf());
    cfg.workers = 2;
    cfg
}

fn synth_dataset(count: u64, seed: u64) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("ds");
    synth::run(
        &cfg_for(&root),
        &SynthArgs {
            spec: None,
            out: root.clone(),
            count,
            seed: Some(seed),
        },
    )
    .unwrap();
    (dir, root)
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn synth_writes_kitti_layout() {
    let (_d, root) = synth_dataset(5, 1);
    for sub in ["velodyne", "calib", "label_2"] {
        assert_eq!(files(&root.join(sub)).len(), 5, "{sub}");
    }
    let (_d, root) = synth_dataset(0, 1);
    for sub in ["velodyne", "calib", "label_2"] {
        assert!(files(&root.join(sub)).is_empty());
    }
}

#[test]
fn synth_labels_agree_with_pipeline_clusters() {
    let (_d, root) = synth_dataset(10, 2);
    let params = PipelineParams::default();
    let mut worst: f64 = 1.0;
    for k in 0..10 {
        let id = format!("{k:06}");
        let cloud = read_kitti_bin(root.join(format!("velodyne/{id}.bin"))).unwrap();
        let calib = parse_calib(root.join(format!("calib/{id}.txt"))).unwrap();
        let labels = parse_labels(root.join(format!("label_2/{id}.txt"))).unwrap();
        // pipeline stages up to the ground-line adjustment
        let reduced = downsample(&cloud, &params.downsample).unwrap();
        let ground = extract_ground(&reduced, &params.ground).unwrap();
        let (objects, _) = remove_ground(&reduced, &ground.ground_indices).unwrap();
        let boxes: Vec<_> = dbscan(&objects, &params.dbscan)
            .unwrap()
            .clusters
            .iter()
            .filter(|c| validate_cluster(c, &params.validation))
            .filter_map(|c| {
                // project the cluster's 3D extent the same way labels are projected
                let e = &c.extent;
                let as_object = GroundTruthObject {
                    center: [(e.min[0] + e.max[0]) / 2.0, (e.min[1] + e.max[1]) / 2.0],
                    base_z: e.min[2],
                    extent: e.size(),
                };
                let (raw, _) = as_object.image_box(&calib)?;
                Some(adjust_ground_line(raw, c, &ground.model, &calib).clip_to(&calib.image_size.rect()))
            })
            .collect();
        for l in &labels.labels {
            let best = boxes.iter().map(|b| iou(b, &l.bbox)).fold(0.0, f64::max);
            worst = worst.min(best);
        }
    }
    assert!(worst >= 0.9, "worst label/cluster IoU {worst}");
}

fn propose_into(root: &Path, out: &Path, workers: usize) -> propose::ProposeSummary {
    let mut cfg = cfg_for(root);
    cfg.workers = workers;
    propose::run(
        &cfg,
        &ProposeArgs {
            out: out.to_path_buf(),
            scheme: Scheme::Clustering,
            json: false,
            frames: None,
        },
    )
    .unwrap()
}

#[test]
fn propose_single_frame_via_binary() {
    let (d, root) = synth_dataset(1, 3);
    let out = d.path().join("p");
    let o = run(&["propose", "--dataset-root", s(&root), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(files(&out), vec!["000000.txt", "timing.json"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("median"), "{stdout}");
}

#[test]
fn propose_missing_calib_fails_with_path() {
    let (d, root) = synth_dataset(2, 3);
    let missing = root.join("calib/000001.txt");
    fs::remove_file(&missing).unwrap();
    let out = d.path().join("p");
    let o = run(&["propose", "--dataset-root", s(&root), "--out", s(&out)]);
    assert!(!o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line = stderr.lines().last().unwrap();
    assert!(line.starts_with("error: "), "{stderr}");
    assert!(line.contains(s(&missing)), "{stderr}");
    // the other frame is still written
    assert!(out.join("000000.txt").exists());
}

#[test]
fn propose_is_deterministic_across_runs_and_widths() {
    let (d, root) = synth_dataset(10, 4);
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    propose_into(&root, &a, 1);
    propose_into(&root, &b, 4);
    let names: Vec<String> = files(&a).into_iter().filter(|f| f.ends_with(".txt")).collect();
    assert_eq!(names.len(), 10);
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n}");
    }
}

fn eval_dir(root: &Path, proposals: &Path, out: &Path, scores: Option<PathBuf>) -> lidarprop::evaluation::EvalReport {
    eval::run(
        &cfg_for(root),
        &EvalArgs {
            proposals: proposals.to_path_buf(),
            labels: None,
            scores,
            out: out.to_path_buf(),
            frames: None,
        },
    )
    .unwrap()
}

/// Proposal files holding exactly the label boxes.
fn exact_proposals(root: &Path, out: &Path) -> usize {
    fs::create_dir_all(out).unwrap();
    let mut total = 0;
    for name in files(&root.join("label_2")) {
        let id = name.trim_end_matches(".txt");
        let labels = parse_labels(root.join("label_2").join(&name)).unwrap();
        let text: String = labels
            .labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let b = l.bbox;
                format!("{id} {} {} {} {} c{i} -\n", b.left, b.top, b.right, b.bottom)
            })
            .collect();
        total += labels.labels.len();
        fs::write(out.join(&name), text).unwrap();
    }
    total
}

#[test]
fn eval_exact_and_empty_proposals() {
    let (d, root) = synth_dataset(4, 5);
    let exact = d.path().join("exact");
    let total = exact_proposals(&root, &exact);
    let r = eval_dir(&root, &exact, &d.path().join("r1"), None);
    assert_eq!((r.max_recall, r.missed_labels, r.labels), (1.0, 0, total));
    assert!(r.ap.is_none());
    for name in ["report.json", "report.csv", "recall_curve.csv"] {
        assert!(d.path().join("r1").join(name).exists());
    }

    let empty = d.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let r = eval_dir(&root, &empty, &d.path().join("r2"), None);
    assert_eq!((r.max_recall, r.missed_labels), (0.0, total));
}

#[test]
fn eval_reports_orphan_proposal_frames() {
    let (d, root) = synth_dataset(2, 6);
    let p = d.path().join("p");
    propose_into(&root, &p, 1);
    fs::write(p.join("999999.txt"), "").unwrap();
    let o = run(&["eval", "--dataset-root", s(&root), "--proposals", s(&p), "--out", s(&d.path().join("r"))]);
    assert!(!o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.starts_with("error: ") && stderr.contains("999999"), "{stderr}");
}

#[test]
fn eval_ap_matches_library() {
    let (d, root) = synth_dataset(6, 7);
    let p = d.path().join("p");
    propose_into(&root, &p, 2);
    // deterministic pseudo-scores
    let mut scores = String::new();
    for name in files(&p).into_iter().filter(|f| f.ends_with(".txt")) {
        let id = name.trim_end_matches(".txt");
        let n = fs::read_to_string(p.join(&name)).unwrap().lines().count();
        for i in 0..n {
            scores.push_str(&format!("{id} {i} {}\n", ((i * 37 + id.len()) % 11) as f64 / 10.0));
        }
    }
    let score_path = d.path().join("scores.txt");
    fs::write(&score_path, &scores).unwrap();
    let report = eval_dir(&root, &p, &d.path().join("r"), Some(score_path));
    let ap = report.ap.clone().expect("AP section");

    let mut frames = Vec::new();
    for name in files(&root.join("label_2")) {
        let id = name.trim_end_matches(".txt").to_string();
        let text = fs::read_to_string(p.join(&name)).unwrap();
        frames.push(FrameRecord {
            proposals: parse_proposal_lines(&id, &text).unwrap(),
            labels: parse_labels(root.join("label_2").join(&name)).unwrap(),
            frame_id: id,
        });
    }
    lidarprop::evaluation::apply_scores(&mut frames, &scores).unwrap();
    for tier in DifficultyTier::ALL {
        assert_eq!(ap[tier.name], average_precision(&frames, &tier, 0.5).unwrap(), "{}", tier.name);
    }
}

#[test]
fn bench_synthetic_suite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = cfg_for(&dir.path().join("unused"));
    let args = BenchArgs {
        synthetic: Some(8),
        ..Default::default()
    };
    let rows = bench::run(&cfg, &args).unwrap();
    assert_eq!(rows.len(), 2);
    let (clu, sli) = (&rows[0], &rows[1]);
    assert_eq!((clu.scheme.as_str(), sli.scheme.as_str()), ("clustering", "sliding"));
    assert!(clu.regions_per_frame * 10.0 < sli.regions_per_frame);

    let again = bench::run(&cfg, &args).unwrap();
    let strip = |r: &[bench::BenchRow]| -> Vec<bench::BenchRow> {
        r.iter().map(|r| bench::BenchRow { roi_ms: 0.0, ..r.clone() }).collect()
    };
    assert_eq!(strip(&rows), strip(&again));

    let one = bench::run(
        &cfg,
        &BenchArgs {
            schemes: vec![Scheme::Sliding],
            ..args.clone()
        },
    )
    .unwrap();
    assert_eq!(one.len(), 1);
    let table = bench::to_table(&one);
    assert_eq!(table.lines().count(), 2);
    assert_eq!(bench::to_csv(&one).lines().count(), 2);
}

#[test]
fn bench_sweep_rows() {
    let dir = tempfile::tempdir().unwrap();
    let rows = bench::run(
        &cfg_for(dir.path()),
        &BenchArgs {
            schemes: vec![Scheme::Clustering],
            synthetic: Some(3),
            sweep_aspect: vec![0.35, 0.41],
            sweep_eps: vec![0.4, 0.6],
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(rows.len(), 4);
    assert!(bench::best_clustering(&rows).is_some());
}

#[test]
fn plot_counts_polylines_and_legends() {
    let d = tempfile::tempdir().unwrap();
    let curve = |name: &str, body: &str| {
        let p = d.path().join(name);
        fs::write(&p, body).unwrap();
        p
    };
    let one = curve("one.csv", "threshold,recall\n0.3,1.0\n0.9,0.2\n");
    let out = d.path().join("fig.svg");
    plot::run(&[one.clone()], &out).unwrap();
    let svg = fs::read_to_string(&out).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);

    let two = curve("two.csv", "threshold,recall\n0.3,0.9\n0.5,0.8\n0.9,0.1\n");
    let three = curve("three.csv", "0.3,0.5\n0.6,0.5\n");
    let o = run(&["plot", s(&one), s(&two), s(&three), "--out", s(&out)]);
    assert!(o.status.success());
    let svg = fs::read_to_string(&out).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert_eq!(svg.matches(r#"class="legend""#).count(), 3);
    for name in ["one", "two", "three"] {
        assert!(svg.contains(&format!(">{name}</text>")));
    }

    let bad = curve("bad.csv", "threshold,recall\n0.3,1\n0.4,x\n");
    let o = run(&["plot", s(&bad), "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

/// y coordinates of the first polyline.
fn polyline_ys(svg: &str) -> Vec<f64> {
    let start = svg.find("<polyline").unwrap();
    let attr = &svg[start..];
    let pts = attr.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
    pts.split_whitespace()
        .map(|p| p.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn monotone_curve_gives_monotone_polyline() {
    let c = parse_curve_csv("m", "threshold,recall\n0.3,1\n0.4,0.95\n0.5,0.95\n0.7,0.6\n0.9,0.1\n").unwrap();
    let ys = polyline_ys(&render_svg(&[c]));
    assert_eq!(ys.len(), 5);
    // recall falls, so SVG y (downward) rises
    assert!(ys.windows(2).all(|w| w[1] >= w[0]), "{ys:?}");
}

#[test]
fn config_file_and_flags() {
    let (d, root) = synth_dataset(1, 8);
    let cfg_path = d.path().join("run.cfg");
    fs::write(&cfg_path, format!("dataset.root = {}\nrun.seed = 3\n", root.display())).unwrap();
    let out = d.path().join("p");
    let o = run(&["propose", "--config", s(&cfg_path), "--seed", "4", "--workers", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("000000.txt").exists());

    fs::write(&cfg_path, "dbscan.radius = 1\n").unwrap();
    let o = run(&["propose", "--config", s(&cfg_path), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.starts_with("error: ") && stderr.contains("unknown key"), "{stderr}");

    let o = run(&["propose", "--image-size", "12", "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));
}

#[test]
fn dataset_root_from_environment() {
    let (d, root) = synth_dataset(1, 9);
    let out = d.path().join("p");
    let o = bin()
        .env(DATASET_ROOT_ENV, &root)
        .args(["propose", "--out", s(&out)])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("000000.txt").exists());
}

#[test]
fn synth_via_binary_with_spec() {
    let d = tempfile::tempdir().unwrap();
    let spec = d.path().join("scene.txt");
    fs::write(&spec, "seed = 5\nground.points = 3000\npedestrian = 10 0 0.6 0.6 1.7 200\n").unwrap();
    let out = d.path().join("ds");
    let o = run(&["synth", "--spec", s(&spec), "--out", s(&out), "--count", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(parse_labels(out.join("label_2/000001.txt")).unwrap().labels.len(), 1);
    let o = run(&["synth", "--spec", s(&d.path().join("nope.txt")), "--out", s(&out)]);
    assert!(!o.status.success());
}
