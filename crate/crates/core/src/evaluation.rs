//! Proposal quality against KITTI labels.
//!
//! Two notions of "found" are used. Coverage ([`max_recall`],
//! [`recall_curve`]) asks whether any proposal overlaps a label by more than
//! the IoU threshold; it bounds what a downstream classifier could reach.
//! Detection ([`match_frame`], [`average_precision`]) is one-to-one: each
//! label absorbs at most one proposal and repeated hits are false positives.
//! IoU comparisons are strict (`iou > threshold`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud_io::frame_id_of;
use crate::proposals::{BBox2D, Proposal};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("argument error: {0}")]
    Argument(String),
}

/// Intersection over union; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BBox2D, b: &BBox2D) -> f64 {
    let w = a.right.min(b.right) - a.left.max(b.left);
    let h = a.bottom.min(b.bottom) - a.top.max(b.top);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    pub frame_id: String,
    pub class: String,
    pub bbox: BBox2D,
    pub truncation: f64,
    /// 0 visible, 1 partly occluded, 2 largely occluded, 3 unknown.
    pub occlusion: u8,
}

impl GroundTruthLabel {
    pub fn height_px(&self) -> f64 {
        self.bbox.height()
    }
}

/// Labels of one frame plus the `DontCare` regions where detections are
/// neither rewarded nor penalized.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub labels: Vec<GroundTruthLabel>,
    pub dont_care: Vec<BBox2D>,
}

pub fn parse_labels_str(frame_id: &str, text: &str, classes: &[&str]) -> Result<LabelSet, EvalError> {
    let mut set = LabelSet::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| EvalError::Format { line: n + 1, msg };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 15 {
            return Err(err(format!("expected at least 15 fields, got {}", f.len())));
        }
        let class = f[0];
        let keep = classes.contains(&class);
        if !keep && class != "DontCare" {
            continue;
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| err(format!("field {}: bad number `{}`", i + 1, f[i])));
        let bbox = BBox2D::new(num(4)?, num(5)?, num(6)?, num(7)?);
        if class == "DontCare" {
            set.dont_care.push(bbox);
            continue;
        }
        if !bbox.is_valid() {
            return Err(err(format!("degenerate box {bbox:?}")));
        }
        let truncation = num(1)?;
        if !(0.0..=1.0).contains(&truncation) {
            return Err(err(format!("truncation {truncation} outside [0, 1]")));
        }
        let occlusion: u8 = f[2]
            .parse()
            .ok()
            .filter(|o| *o <= 3)
            .ok_or_else(|| err(format!("occlusion `{}` not in 0..=3", f[2])))?;
        set.labels.push(GroundTruthLabel {
            frame_id: frame_id.to_string(),
            class: class.to_string(),
            bbox,
            truncation,
            occlusion,
        });
    }
    Ok(set)
}

/// Reads a KITTI label file keeping `Pedestrian` objects.
pub fn parse_labels(path: impl AsRef<Path>) -> Result<LabelSet, EvalError> {
    parse_labels_with_classes(path, &["Pedestrian"])
}

pub fn parse_labels_with_classes(path: impl AsRef<Path>, classes: &[&str]) -> Result<LabelSet, EvalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_labels_str(&frame_id_of(path), &text, classes)
}

/// KITTI label line for a pedestrian box; 3D fields carry the given values.
pub fn format_label_line(label: &GroundTruthLabel, dims_hwl: [f64; 3], location: [f64; 3]) -> String {
    let b = &label.bbox;
    format!(
        "{} {:.2} {} 0.00 {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} 0.00",
        label.class,
        label.truncation,
        label.occlusion,
        b.left,
        b.top,
        b.right,
        b.bottom,
        dims_hwl[0],
        dims_hwl[1],
        dims_hwl[2],
        location[0],
        location[1],
        location[2],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyTier {
    pub name: &'static str,
    pub min_height_px: f64,
    pub max_occlusion: u8,
    pub max_truncation: f64,
}

impl DifficultyTier {
    pub const EASY: DifficultyTier = DifficultyTier {
        name: "easy",
        min_height_px: 40.0,
        max_occlusion: 0,
        max_truncation: 0.15,
    };
    pub const MODERATE: DifficultyTier = DifficultyTier {
        name: "moderate",
        min_height_px: 25.0,
        max_occlusion: 1,
        max_truncation: 0.30,
    };
    pub const HARD: DifficultyTier = DifficultyTier {
        name: "hard",
        min_height_px: 25.0,
        max_occlusion: 2,
        max_truncation: 0.50,
    };
    pub const ALL: [DifficultyTier; 3] = [Self::EASY, Self::MODERATE, Self::HARD];

    pub fn admits(&self, label: &GroundTruthLabel) -> bool {
        label.height_px() >= self.min_height_px
            && label.occlusion <= self.max_occlusion
            && label.truncation <= self.max_truncation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    /// Matched the label with this index.
    TruePositive(usize),
    FalsePositive,
    /// Overlaps a region that does not count.
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Proposal index matched to each label.
    pub label_match: Vec<Option<usize>>,
    pub outcomes: Vec<Outcome>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Order in which proposals claim labels: descending score when every
/// proposal is scored, otherwise descending IoU to the best label; ties by index.
pub fn processing_order(proposals: &[Proposal], labels: &[BBox2D]) -> Vec<usize> {
    let keys: Vec<f64> = if proposals.iter().all(|p| p.score.is_some()) {
        proposals.iter().map(|p| p.score.unwrap()).collect()
    } else {
        proposals
            .iter()
            .map(|p| labels.iter().map(|l| iou(&p.bbox, l)).fold(0.0, f64::max))
            .collect()
    };
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    order
}

/// Greedy one-to-one matching within one frame. `ignore` regions absorb
/// proposals that match no label.
pub fn match_boxes(proposals: &[Proposal], labels: &[BBox2D], ignore: &[BBox2D], threshold: f64) -> MatchResult {
    let mut label_match = vec![None; labels.len()];
    let mut outcomes = vec![Outcome::FalsePositive; proposals.len()];
    for pi in processing_order(proposals, labels) {
        let p = &proposals[pi].bbox;
        let best = labels
            .iter()
            .enumerate()
            .filter(|(li, _)| label_match[*li].is_none())
            .map(|(li, l)| (li, iou(p, l)))
            .filter(|(_, v)| *v > threshold)
            .fold(None::<(usize, f64)>, |acc, (li, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((li, v)),
            });
        outcomes[pi] = match best {
            Some((li, _)) => {
                label_match[li] = Some(pi);
                Outcome::TruePositive(li)
            }
            None if ignore.iter().any(|r| iou(p, r) > threshold) => Outcome::Ignored,
            None => Outcome::FalsePositive,
        };
    }
    let tp = label_match.iter().filter(|m| m.is_some()).count();
    let fp = outcomes.iter().filter(|o| **o == Outcome::FalsePositive).count();
    MatchResult {
        fn_: labels.len() - tp,
        label_match,
        outcomes,
        tp,
        fp,
    }
}

pub fn match_frame(proposals: &[Proposal], labels: &LabelSet, threshold: f64) -> MatchResult {
    let boxes: Vec<BBox2D> = labels.labels.iter().map(|l| l.bbox).collect();
    match_boxes(proposals, &boxes, &labels.dont_care, threshold)
}

/// Proposals and labels of one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameRecord {
    pub frame_id: String,
    pub proposals: Vec<Proposal>,
    pub labels: LabelSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub total: usize,
    pub covered: usize,
    pub missed: usize,
    /// `covered / total`; 1 when there are no labels.
    pub recall: f64,
}

pub fn max_recall(frames: &[FrameRecord], threshold: f64) -> RecallSummary {
    let mut total = 0;
    let mut covered = 0;
    for f in frames {
        total += f.labels.labels.len();
        covered += f
            .labels
            .labels
            .iter()
            .filter(|l| f.proposals.iter().any(|p| iou(&p.bbox, &l.bbox) > threshold))
            .count();
    }
    RecallSummary {
        total,
        covered,
        missed: total - covered,
        recall: if total == 0 { 1.0 } else { covered as f64 / total as f64 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub recall: f64,
}

/// 0.30, 0.35, ..., 0.90
pub fn default_curve_thresholds() -> Vec<f64> {
    (0..=12).map(|k| (30 + 5 * k) as f64 / 100.0).collect()
}

pub fn recall_curve(frames: &[FrameRecord], thresholds: &[f64]) -> Result<Vec<CurvePoint>, EvalError> {
    if thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) || thresholds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::Argument(
            "recall-curve thresholds must be strictly ascending inside (0, 1)".into(),
        ));
    }
    // best IoU per label makes every threshold a single comparison
    let best: Vec<f64> = frames
        .iter()
        .flat_map(|f| {
            f.labels
                .labels
                .iter()
                .map(|l| f.proposals.iter().map(|p| iou(&p.bbox, &l.bbox)).fold(0.0, f64::max))
        })
        .collect();
    Ok(thresholds
        .iter()
        .map(|&t| CurvePoint {
            threshold: t,
            recall: if best.is_empty() {
                1.0
            } else {
                best.iter().filter(|b| **b > t).count() as f64 / best.len() as f64
            },
        })
        .collect())
}

/// 11-point interpolated average precision: mean over recall levels
/// r ∈ {0, 0.1, …, 1} of the best precision reached at recall ≥ r.
pub fn interpolated_ap(precision_recall: &[(f64, f64)]) -> f64 {
    (0..=10)
        .map(|k| {
            let r = k as f64 / 10.0;
            precision_recall
                .iter()
                .filter(|(_, rec)| *rec >= r)
                .map(|(p, _)| *p)
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0
}

/// Average precision of scored proposals on the labels of one difficulty
/// tier. Labels outside the tier and `DontCare` regions are ignored: a
/// proposal matching them is neither true nor false positive.
pub fn average_precision(frames: &[FrameRecord], tier: &DifficultyTier, threshold: f64) -> Result<f64, EvalError> {
    let mut ranked: Vec<(f64, bool)> = Vec::new();
    let mut positives = 0usize;
    for f in frames {
        if let Some(i) = f.proposals.iter().position(|p| p.score.is_none()) {
            return Err(EvalError::Argument(format!(
                "frame {}: proposal {i} has no score; supply a score file (`frame_id proposal_index score` per line)",
                f.frame_id
            )));
        }
        let (inside, outside): (Vec<_>, Vec<_>) = f.labels.labels.iter().partition(|l| tier.admits(l));
        positives += inside.len();
        let boxes: Vec<BBox2D> = inside.iter().map(|l| l.bbox).collect();
        let mut ignore = f.labels.dont_care.clone();
        ignore.extend(outside.iter().map(|l| l.bbox));
        let m = match_boxes(&f.proposals, &boxes, &ignore, threshold);
        for (p, o) in f.proposals.iter().zip(&m.outcomes) {
            match o {
                Outcome::TruePositive(_) => ranked.push((p.score.unwrap(), true)),
                Outcome::FalsePositive => ranked.push((p.score.unwrap(), false)),
                Outcome::Ignored => {}
            }
        }
    }
    if positives == 0 {
        return Ok(0.0);
    }
    // stable: equal scores keep frame then proposal order
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    let curve: Vec<(f64, f64)> = ranked
        .iter()
        .enumerate()
        .map(|(i, (_, hit))| {
            tp += *hit as usize;
            (tp as f64 / (i + 1) as f64, tp as f64 / positives as f64)
        })
        .collect();
    Ok(interpolated_ap(&curve))
}

/// Attaches scores from score-file text (`frame_id proposal_index score`).
pub fn apply_scores(frames: &mut [FrameRecord], text: &str) -> Result<(), EvalError> {
    let mut scores: BTreeMap<(&str, usize), f64> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| EvalError::Format { line: n + 1, msg };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(err(format!("expected `frame_id proposal_index score`, got {} fields", f.len())));
        }
        let idx = f[1].parse().map_err(|_| err(format!("bad index `{}`", f[1])))?;
        let score: f64 = f[2].parse().map_err(|_| err(format!("bad score `{}`", f[2])))?;
        if !score.is_finite() {
            return Err(err("score must be finite".into()));
        }
        scores.insert((f[0], idx), score);
    }
    for frame in frames.iter_mut() {
        for (i, p) in frame.proposals.iter_mut().enumerate() {
            p.score = scores.get(&(frame.frame_id.as_str(), i)).copied();
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub labels: usize,
    pub iou_threshold: f64,
    pub missed_labels: usize,
    pub max_recall: f64,
    pub recall_curve: Vec<CurvePoint>,
    /// Present only when proposals carry scores.
    pub ap: Option<BTreeMap<String, f64>>,
    pub region_count_mean: f64,
    /// Median milliseconds per stage; excluded from determinism checks.
    pub timing_ms: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn evaluate(frames: &[FrameRecord], threshold: f64, curve: &[f64]) -> Result<EvalReport, EvalError> {
        let summary = max_recall(frames, threshold);
        let scored = !frames.is_empty()
            && frames.iter().any(|f| !f.proposals.is_empty())
            && frames.iter().all(|f| f.proposals.iter().all(|p| p.score.is_some()));
        let ap = if scored {
            let mut m = BTreeMap::new();
            for tier in DifficultyTier::ALL {
                m.insert(tier.name.to_string(), average_precision(frames, &tier, threshold)?);
            }
            Some(m)
        } else {
            None
        };
        let regions: usize = frames.iter().map(|f| f.proposals.len()).sum();
        Ok(EvalReport {
            frames: frames.len(),
            labels: summary.total,
            iou_threshold: threshold,
            missed_labels: summary.missed,
            max_recall: summary.recall,
            recall_curve: recall_curve(frames, curve)?,
            ap,
            region_count_mean: if frames.is_empty() {
                0.0
            } else {
                regions as f64 / frames.len() as f64
            },
            timing_ms: BTreeMap::new(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        let _ = writeln!(s, "frames,{}", self.frames);
        let _ = writeln!(s, "labels,{}", self.labels);
        let _ = writeln!(s, "iou_threshold,{}", self.iou_threshold);
        let _ = writeln!(s, "missed_labels,{}", self.missed_labels);
        let _ = writeln!(s, "max_recall,{:.6}", self.max_recall);
        let _ = writeln!(s, "region_count_mean,{:.3}", self.region_count_mean);
        for p in &self.recall_curve {
            let _ = writeln!(s, "recall@{:.2},{:.6}", p.threshold, p.recall);
        }
        if let Some(ap) = &self.ap {
            for (tier, v) in ap {
                let _ = writeln!(s, "ap_{tier},{v:.6}");
            }
        }
        for (stage, ms) in &self.timing_ms {
            let _ = writeln!(s, "time_ms_{stage},{ms:.3}");
        }
        s
    }

    pub fn curve_csv(&self) -> String {
        curve_to_csv(&self.recall_curve)
    }
}

pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("threshold,recall\n");
    for p in curve {
        let _ = writeln!(s, "{:.2},{:.6}", p.threshold, p.recall);
    }
    s
}
