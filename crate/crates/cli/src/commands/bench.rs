//! `bench`: clustering vs sliding-window region extraction, with an
//! optional sweep over the clustering parameters.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use lidarprop::calib::{CalibrationSet, ImageSize};
use lidarprop::cloud_io::SceneSpec;
use lidarprop::evaluation::{iou, parse_labels_with_classes, LabelSet};
use lidarprop::proposals::{
    generate_cluster_proposals, generate_sliding_windows, PipelineParams, Proposal,
    SlidingWindowParams,
};
use lidarprop::PointCloud;
use serde::Serialize;

use super::{default_scene, label_set, load_frame, synth_frame, Scheme};
use crate::config::PipelineConfig;
use crate::frames::{kitti_id, median, ms, resolve, run_ordered};

#[derive(Debug, Clone, Default)]
pub struct BenchArgs {
    /// Schemes to run; both when empty.
    pub schemes: Vec<Scheme>,
    /// Generate this many synthetic frames instead of reading the dataset.
    pub synthetic: Option<u64>,
    /// Scene for synthetic frames; the default suite scene when absent.
    pub spec: Option<PathBuf>,
    pub sweep_aspect: Vec<f64>,
    pub sweep_eps: Vec<f64>,
    pub sweep_min_pts: Vec<usize>,
    pub frames: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub scheme: String,
    pub aspect_ratio: f64,
    pub eps: Option<f64>,
    pub min_pts: Option<usize>,
    pub frames: usize,
    pub regions_per_frame: f64,
    pub labels: usize,
    pub missed_labels: usize,
    pub max_recall: f64,
    /// Median region extraction time per frame.
    pub roi_ms: f64,
}

enum Variant {
    Clustering(PipelineParams),
    Sliding(SlidingWindowParams, ImageSize),
}

#[derive(Clone, Copy)]
struct FrameStat {
    regions: usize,
    covered: usize,
    labels: usize,
    time: Duration,
}

enum Source {
    Synthetic { spec: SceneSpec, calib: CalibrationSet },
    Dataset,
}

fn variants(cfg: &PipelineConfig, args: &BenchArgs) -> Result<Vec<(BenchRow, Variant)>> {
    let schemes = if args.schemes.is_empty() {
        vec![Scheme::Clustering, Scheme::Sliding]
    } else {
        args.schemes.clone()
    };
    let or = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
    let row = |scheme: Scheme, aspect: f64, eps: Option<f64>, min_pts: Option<usize>| BenchRow {
        scheme: scheme.to_string(),
        aspect_ratio: aspect,
        eps,
        min_pts,
        frames: 0,
        regions_per_frame: 0.0,
        labels: 0,
        missed_labels: 0,
        max_recall: 0.0,
        roi_ms: 0.0,
    };
    let mut out = Vec::new();
    for scheme in schemes {
        match scheme {
            Scheme::Clustering => {
                let base = &cfg.pipeline;
                let min_pts = if args.sweep_min_pts.is_empty() {
                    vec![base.dbscan.min_pts]
                } else {
                    args.sweep_min_pts.clone()
                };
                for &aspect in &or(&args.sweep_aspect, base.aspect_ratio) {
                    for &eps in &or(&args.sweep_eps, base.dbscan.eps) {
                        for &m in &min_pts {
                            let mut p = base.clone();
                            p.aspect_ratio = aspect;
                            p.dbscan.eps = eps;
                            p.dbscan.min_pts = m;
                            p.validate()?;
                            out.push((row(scheme, aspect, Some(eps), Some(m)), Variant::Clustering(p)));
                        }
                    }
                }
            }
            Scheme::Sliding => {
                cfg.sliding.validate()?;
                out.push((
                    row(scheme, cfg.sliding.aspect_ratio, None, None),
                    Variant::Sliding(cfg.sliding.clone(), cfg.dataset.image_size),
                ));
            }
        }
    }
    Ok(out)
}

fn coverage(proposals: &[Proposal], labels: &LabelSet, threshold: f64) -> usize {
    labels
        .labels
        .iter()
        .filter(|l| proposals.iter().any(|p| iou(&p.bbox, &l.bbox) > threshold))
        .count()
}

pub fn run(cfg: &PipelineConfig, args: &BenchArgs) -> Result<Vec<BenchRow>> {
    let variants = variants(cfg, args)?;
    let (source, ids) = match args.synthetic {
        Some(n) => {
            let mut spec = match &args.spec {
                Some(p) => SceneSpec::load(p)?,
                None => default_scene(cfg.seed()),
            };
            spec.seed = cfg.seed();
            spec.validate()?;
            let calib = CalibrationSet::kitti_reference().with_image_size(cfg.dataset.image_size);
            (Source::Synthetic { spec, calib }, (0..n).map(kitti_id).collect::<Vec<_>>())
        }
        None => (Source::Dataset, resolve(args.frames.as_deref(), &cfg.velodyne_dir()?, "bin")?),
    };
    if ids.is_empty() {
        bail!("bench has no frames to run on");
    }
    let classes = cfg.class_refs();
    let threshold = cfg.eval.iou_threshold;

    let load = |k: usize, id: &str| -> Result<(PointCloud, CalibrationSet, LabelSet)> {
        match &source {
            Source::Synthetic { spec, calib } => {
                let (cloud, labels) = synth_frame(spec, k as u64, calib, id)?;
                Ok((cloud, calib.clone(), label_set(&labels)))
            }
            Source::Dataset => {
                let (cloud, calib) = load_frame(cfg, id)?;
                let labels = parse_labels_with_classes(cfg.label_dir()?.join(format!("{id}.txt")), &classes)?;
                Ok((cloud, calib, labels))
            }
        }
    };
    let indexed: Vec<(usize, &String)> = ids.iter().enumerate().collect();
    let per_frame = run_ordered(cfg.workers, &indexed, |&(k, id)| -> Result<Vec<FrameStat>> {
        let (cloud, calib, labels) = load(k, id).with_context(|| format!("frame {id}"))?;
        variants
            .iter()
            .map(|(_, v)| {
                let t = Instant::now();
                let proposals = match v {
                    Variant::Clustering(p) => generate_cluster_proposals(&cloud, &calib, p)?.proposals,
                    Variant::Sliding(p, size) => generate_sliding_windows(*size, p)?,
                };
                let time = t.elapsed();
                Ok(FrameStat {
                    regions: proposals.len(),
                    covered: coverage(&proposals, &labels, threshold),
                    labels: labels.labels.len(),
                    time,
                })
            })
            .collect()
    })?;
    let per_frame = per_frame.into_iter().collect::<Result<Vec<_>>>()?;

    let n = per_frame.len();
    Ok(variants
        .into_iter()
        .enumerate()
        .map(|(j, (mut row, _))| {
            let stats: Vec<FrameStat> = per_frame.iter().map(|f| f[j]).collect();
            let labels: usize = stats.iter().map(|s| s.labels).sum();
            let covered: usize = stats.iter().map(|s| s.covered).sum();
            row.frames = n;
            row.regions_per_frame = stats.iter().map(|s| s.regions).sum::<usize>() as f64 / n as f64;
            row.labels = labels;
            row.missed_labels = labels - covered;
            row.max_recall = if labels == 0 { 1.0 } else { covered as f64 / labels as f64 };
            row.roi_ms = ms(median(stats.iter().map(|s| s.time).collect()));
            row
        })
        .collect())
}

/// Best clustering row: highest recall, then fewest regions.
pub fn best_clustering(rows: &[BenchRow]) -> Option<&BenchRow> {
    rows.iter().filter(|r| r.scheme == "clustering").max_by(|a, b| {
        a.max_recall
            .total_cmp(&b.max_recall)
            .then(b.regions_per_frame.total_cmp(&a.regions_per_frame))
    })
}

pub fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "-".into())
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s =
        String::from("scheme,aspect_ratio,eps,min_pts,frames,regions_per_frame,labels,missed_labels,max_recall,roi_ms\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.3},{},{},{:.6},{:.3}",
            r.scheme,
            r.aspect_ratio,
            opt(r.eps),
            opt(r.min_pts),
            r.frames,
            r.regions_per_frame,
            r.labels,
            r.missed_labels,
            r.max_recall,
            r.roi_ms
        );
    }
    s
}

pub fn to_table(rows: &[BenchRow]) -> String {
    let header = ["scheme", "aspect", "eps", "min_pts", "regions/frame", "missed", "max_recall", "roi_ms"];
    let cells: Vec<[String; 8]> = rows
        .iter()
        .map(|r| {
            [
                r.scheme.clone(),
                format!("{:.2}", r.aspect_ratio),
                opt(r.eps),
                opt(r.min_pts),
                format!("{:.1}", r.regions_per_frame),
                format!("{}/{}", r.missed_labels, r.labels),
                format!("{:.4}", r.max_recall),
                format!("{:.2}", r.roi_ms),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..8)
        .map(|i| cells.iter().map(|c| c[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let mut s = String::new();
    let line = |s: &mut String, items: Vec<&str>| {
        let parts: Vec<String> = items
            .iter()
            .enumerate()
            .map(|(i, v)| if i == 0 { format!("{v:<w$}", w = widths[i]) } else { format!("{v:>w$}", w = widths[i]) })
            .collect();
        let _ = writeln!(s, "{}", parts.join("  ").trim_end());
    };
    line(&mut s, header.to_vec());
    for c in &cells {
        line(&mut s, c.iter().map(String::as_str).collect());
    }
    s
}
