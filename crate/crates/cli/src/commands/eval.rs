//! `eval`: report, metric CSV and recall curve for a proposal directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lidarprop::evaluation::{
    apply_scores, default_curve_thresholds, parse_labels_with_classes, EvalReport, FrameRecord,
};
use lidarprop::proposals::parse_proposal_lines;
use log::warn;

use super::propose::TIMING_FILE;
use crate::config::PipelineConfig;
use crate::frames::{list_ids, parse_selector};

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub proposals: PathBuf,
    /// Defaults to the dataset label directory.
    pub labels: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub out: PathBuf,
    pub frames: Option<String>,
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const CURVE_CSV: &str = "recall_curve.csv";

/// Frames with their labels and proposals; scores attached when given.
pub fn load_records(cfg: &PipelineConfig, args: &EvalArgs) -> Result<Vec<FrameRecord>> {
    let label_dir = match &args.labels {
        Some(d) => d.clone(),
        None => cfg.label_dir()?,
    };
    let proposal_ids: BTreeSet<String> = list_ids(&args.proposals, "txt")?.into_iter().collect();
    let ids = match &args.frames {
        Some(sel) => parse_selector(sel)?,
        None => {
            let label_ids = list_ids(&label_dir, "txt")?;
            let known: BTreeSet<&String> = label_ids.iter().collect();
            let orphans: Vec<&String> = proposal_ids.iter().filter(|id| !known.contains(id)).collect();
            if !orphans.is_empty() {
                bail!(
                    "frame id mismatch: {} proposal file(s) have no label file in {}: {}",
                    orphans.len(),
                    label_dir.display(),
                    orphans.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
                );
            }
            label_ids
        }
    };

    let classes = cfg.class_refs();
    let mut missing = Vec::new();
    let mut frames = Vec::with_capacity(ids.len());
    for id in ids {
        let labels = parse_labels_with_classes(label_dir.join(format!("{id}.txt")), &classes)
            .with_context(|| format!("labels of frame {id}"))?;
        let proposals = if proposal_ids.contains(&id) {
            let path = args.proposals.join(format!("{id}.txt"));
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            parse_proposal_lines(&id, &text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            missing.push(id.clone());
            Vec::new()
        };
        frames.push(FrameRecord {
            frame_id: id,
            proposals,
            labels,
        });
    }
    if !missing.is_empty() {
        warn!("{} frame(s) have no proposal file and count as empty", missing.len());
    }

    if let Some(path) = &args.scores {
        let text = fs::read_to_string(path).with_context(|| format!("reading scores {}", path.display()))?;
        apply_scores(&mut frames, &text).with_context(|| format!("parsing {}", path.display()))?;
        for f in &frames {
            if let Some(i) = f.proposals.iter().position(|p| p.score.is_none()) {
                bail!("score file {} has no score for frame {} proposal {i}", path.display(), f.frame_id);
            }
        }
    }
    Ok(frames)
}

fn read_timing(dir: &Path) -> BTreeMap<String, f64> {
    #[derive(serde::Deserialize)]
    struct Timing {
        timing_ms: BTreeMap<String, f64>,
    }
    fs::read_to_string(dir.join(TIMING_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<Timing>(&t).ok())
        .map(|t| t.timing_ms)
        .unwrap_or_default()
}

pub fn run(cfg: &PipelineConfig, args: &EvalArgs) -> Result<EvalReport> {
    let frames = load_records(cfg, args)?;
    let mut report = EvalReport::evaluate(&frames, cfg.eval.iou_threshold, &default_curve_thresholds())?;
    if args.scores.is_some() && report.ap.is_none() {
        warn!("no proposals to score; AP section omitted");
    }
    report.timing_ms = read_timing(&args.proposals);
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for (name, body) in [
        (REPORT_JSON, report.to_json()),
        (REPORT_CSV, report.to_csv()),
        (CURVE_CSV, report.curve_csv()),
    ] {
        let path = args.out.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(report)
}
