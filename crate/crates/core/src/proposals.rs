//! 2D region proposals: clusters projected into the image and the
//! exhaustive sliding-window baseline.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{self, CalibError, CalibrationSet, ImageSize};
use crate::cloud_io::PointCloud;
use crate::clustering::{self, Cluster, ClusterError, DbscanParams, Extent3};
use crate::preprocess::{self, DownsampleParams, GroundModel, GroundParams, PreprocessError};

#[derive(Debug, Error)]
pub enum ProposalError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error("format error: line {line}: {msg}")]
    Format { line: usize, msg: String },
}

/// Image rectangle in pixels; area is `(right - left) * (bottom - top)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox2D {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl BBox2D {
    pub const fn new(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self {
            left,
            top,
            right,
            bottom,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.left < self.right && self.top < self.bottom
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// Positive-area overlap with `other`.
    pub fn intersects(&self, other: &BBox2D) -> bool {
        self.left < other.right && other.left < self.right && self.top < other.bottom && other.top < self.bottom
    }

    pub fn clip_to(&self, bounds: &BBox2D) -> BBox2D {
        BBox2D::new(
            self.left.max(bounds.left),
            self.top.max(bounds.top),
            self.right.min(bounds.right),
            self.bottom.min(bounds.bottom),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProposalSource {
    Cluster(u32),
    Window(u32),
}

impl fmt::Display for ProposalSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProposalSource::Cluster(id) => write!(f, "c{id}"),
            ProposalSource::Window(id) => write!(f, "w{id}"),
        }
    }
}

impl FromStr for ProposalSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad proposal source `{s}`");
        let (kind, id) = s.split_at_checked(1).ok_or_else(bad)?;
        let id: u32 = id.parse().map_err(|_| bad())?;
        match kind {
            "c" => Ok(ProposalSource::Cluster(id)),
            "w" => Ok(ProposalSource::Window(id)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: BBox2D,
    pub source: ProposalSource,
    pub cluster_extent: Option<Extent3>,
    pub score: Option<f64>,
}

impl Proposal {
    pub fn unscored(bbox: BBox2D, source: ProposalSource) -> Self {
        Self {
            bbox,
            source,
            cluster_extent: None,
            score: None,
        }
    }
}

/// Closed interval in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
}

impl AxisRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// Plausible pedestrian extents. `dz` is the vertical axis of the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationParams {
    pub dx: AxisRange,
    pub dy: AxisRange,
    pub dz: AxisRange,
}

impl Default for ValidationParams {
    fn default() -> Self {
        Self {
            dx: AxisRange::new(0.1, 1.2),
            dy: AxisRange::new(0.1, 1.2),
            dz: AxisRange::new(0.4, 2.2),
        }
    }
}

impl ValidationParams {
    pub fn validate(&self) -> Result<(), ProposalError> {
        for (name, r) in [("dx", self.dx), ("dy", self.dy), ("dz", self.dz)] {
            if !(r.min >= 0.0 && r.min <= r.max) {
                return Err(ProposalError::InvalidParams(format!(
                    "validation.{name}: need 0 <= min <= max, got [{}, {}]",
                    r.min, r.max
                )));
            }
        }
        Ok(())
    }
}

pub fn validate_cluster(cluster: &Cluster, params: &ValidationParams) -> bool {
    let e = &cluster.extent;
    params.dx.contains(e.dx()) && params.dy.contains(e.dy()) && params.dz.contains(e.dz())
}

/// Extends the box bottom down to the image row of the ground point under
/// the cluster centroid. The box never shrinks; the new bottom is clamped to
/// the image height.
pub fn adjust_ground_line(bbox: BBox2D, cluster: &Cluster, ground: &GroundModel, calib: &CalibrationSet) -> BBox2D {
    let [cx, cy, _] = cluster.centroid;
    let Some(px) = calib.project_xyz([cx, cy, ground.height_at(cx, cy)]) else {
        return bbox;
    };
    let limit = calib.image_size.height as f64;
    if px.v > bbox.bottom {
        BBox2D {
            bottom: px.v.min(limit).max(bbox.bottom),
            ..bbox
        }
    } else {
        bbox
    }
}

/// Keeps the height, sets width = `ratio * height` around the original
/// horizontal center, then shifts the box back inside the image. A box wider
/// than the image after correction spans the full image width.
pub fn fix_aspect_ratio(bbox: BBox2D, ratio: f64, image: ImageSize) -> BBox2D {
    let image_w = image.width as f64;
    let width = ratio * bbox.height();
    if width >= image_w {
        return BBox2D {
            left: 0.0,
            right: image_w,
            ..bbox
        };
    }
    let center = (bbox.left + bbox.right) / 2.0;
    let left = (center - width / 2.0).max(0.0).min(image_w - width);
    BBox2D {
        left,
        right: left + width,
        ..bbox
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub downsample: DownsampleParams,
    pub ground: GroundParams,
    pub dbscan: DbscanParams,
    pub validation: ValidationParams,
    /// Target width / height of every cluster proposal.
    pub aspect_ratio: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            downsample: DownsampleParams::default(),
            ground: GroundParams::default(),
            dbscan: DbscanParams::default(),
            validation: ValidationParams::default(),
            aspect_ratio: 0.41,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<(), ProposalError> {
        self.downsample.validate()?;
        self.ground.validate()?;
        self.dbscan.validate()?;
        self.validation.validate()?;
        if !(self.aspect_ratio > 0.0 && self.aspect_ratio.is_finite()) {
            return Err(ProposalError::InvalidParams("aspect_ratio must be > 0".into()));
        }
        Ok(())
    }
}

/// Wall-clock time spent in each pipeline stage of one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub downsample: Duration,
    pub ground: Duration,
    pub clustering: Duration,
    pub projection: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.downsample + self.ground + self.clustering + self.projection
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub proposals: Vec<Proposal>,
    pub clusters: usize,
    pub ground: Option<GroundModel>,
    pub ground_fallback: bool,
    pub timings: StageTimings,
}

/// Downsample → ground removal → DBSCAN → validation → projection →
/// ground-line adjustment → aspect-ratio correction.
pub fn generate_cluster_proposals(
    cloud: &PointCloud,
    calib: &CalibrationSet,
    params: &PipelineParams,
) -> Result<PipelineOutput, ProposalError> {
    params.validate()?;
    let mut timings = StageTimings::default();
    let mut out = PipelineOutput {
        proposals: Vec::new(),
        clusters: 0,
        ground: None,
        ground_fallback: false,
        timings,
    };

    let t = Instant::now();
    let reduced = preprocess::downsample(cloud, &params.downsample)?;
    timings.downsample = t.elapsed();
    if reduced.is_empty() {
        out.timings = timings;
        return Ok(out);
    }

    let t = Instant::now();
    let ground = preprocess::extract_ground(&reduced, &params.ground)?;
    let (objects, _) = preprocess::remove_ground(&reduced, &ground.ground_indices)?;
    timings.ground = t.elapsed();
    out.ground = Some(ground.model);
    out.ground_fallback = ground.fallback;

    let t = Instant::now();
    let clusters = clustering::dbscan(&objects, &params.dbscan)?.clusters;
    timings.clustering = t.elapsed();
    out.clusters = clusters.len();

    let t = Instant::now();
    let image = calib.image_size.rect();
    let mut scratch = Vec::new();
    for cluster in clusters.iter().filter(|c| validate_cluster(c, &params.validation)) {
        scratch.clear();
        scratch.extend(cluster.point_indices.iter().map(|&i| objects.points[i]));
        let Some(raw) = calib::project_cluster_bbox(&scratch, calib)? else {
            continue;
        };
        let grounded = adjust_ground_line(raw, cluster, &ground.model, calib).clip_to(&image);
        if !grounded.is_valid() {
            continue;
        }
        let bbox = fix_aspect_ratio(grounded, params.aspect_ratio, calib.image_size);
        if !(bbox.is_valid() && bbox.intersects(&image)) {
            continue;
        }
        out.proposals.push(Proposal {
            bbox,
            source: ProposalSource::Cluster(cluster.id),
            cluster_extent: Some(cluster.extent),
            score: None,
        });
    }
    timings.projection = t.elapsed();
    out.timings = timings;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlidingWindowParams {
    /// Window heights in pixels, ascending.
    pub heights: Vec<f64>,
    /// Window width / height.
    pub aspect_ratio: f64,
    /// Horizontal step as a fraction of the window width.
    pub stride_x: f64,
    /// Vertical step as a fraction of the window height.
    pub stride_y: f64,
}

impl Default for SlidingWindowParams {
    fn default() -> Self {
        Self {
            heights: vec![32.0, 48.0, 72.0, 108.0, 162.0, 243.0],
            aspect_ratio: 0.41,
            stride_x: 0.25,
            stride_y: 0.25,
        }
    }
}

impl SlidingWindowParams {
    pub fn validate(&self) -> Result<(), ProposalError> {
        let stride_ok = |s: f64| s > 0.0 && s <= 1.0;
        if !stride_ok(self.stride_x) || !stride_ok(self.stride_y) {
            return Err(ProposalError::InvalidParams("strides must lie in (0, 1]".into()));
        }
        if !(self.aspect_ratio > 0.0 && self.aspect_ratio.is_finite()) {
            return Err(ProposalError::InvalidParams("sliding aspect_ratio must be > 0".into()));
        }
        if self.heights.is_empty()
            || self.heights.iter().any(|h| !(*h > 0.0 && h.is_finite()))
            || self.heights.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(ProposalError::InvalidParams(
                "window heights must be positive and strictly ascending".into(),
            ));
        }
        Ok(())
    }
}

const SNAP_EPS: f64 = 1e-9;

/// Start offsets of windows of `size` along an axis of length `extent`;
/// the last window is snapped to the far edge.
fn window_offsets(extent: f64, size: f64, stride: f64) -> Vec<f64> {
    let step = stride * size;
    let mut out = Vec::new();
    let mut k = 0u32;
    loop {
        let pos = k as f64 * step;
        if pos + size > extent + SNAP_EPS {
            break;
        }
        out.push(pos);
        k += 1;
    }
    if let Some(&last) = out.last() {
        if last + size < extent - SNAP_EPS {
            out.push(extent - size);
        }
    }
    out
}

/// Every window of every scale, row-major within a scale, scales in the
/// order given. Scales whose window does not fit the image are skipped.
pub fn generate_sliding_windows(image: ImageSize, params: &SlidingWindowParams) -> Result<Vec<Proposal>, ProposalError> {
    params.validate()?;
    let (img_w, img_h) = (image.width as f64, image.height as f64);
    let mut out = Vec::new();
    for &h in &params.heights {
        let w = params.aspect_ratio * h;
        if w > img_w || h > img_h {
            warn!("skipping {w:.1}x{h:.1} windows: larger than the {img_w}x{img_h} image");
            continue;
        }
        let xs = window_offsets(img_w, w, params.stride_x);
        for y in window_offsets(img_h, h, params.stride_y) {
            for &x in &xs {
                let id = out.len() as u32;
                out.push(Proposal::unscored(BBox2D::new(x, y, x + w, y + h), ProposalSource::Window(id)));
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Proposal files
// ---------------------------------------------------------------------------

/// One line per proposal: `frame_id left top right bottom source score`,
/// with `-` standing for a missing score.
pub fn format_proposal_lines(frame_id: &str, proposals: &[Proposal]) -> String {
    let mut s = String::new();
    for p in proposals {
        let b = &p.bbox;
        let score = p.score.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        s.push_str(&format!(
            "{frame_id} {:.3} {:.3} {:.3} {:.3} {} {score}\n",
            b.left, b.top, b.right, b.bottom, p.source
        ));
    }
    s
}

/// Inverse of [`format_proposal_lines`]. Every line must name `frame_id`.
pub fn parse_proposal_lines(frame_id: &str, text: &str) -> Result<Vec<Proposal>, ProposalError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| ProposalError::Format { line: n + 1, msg };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, got {}", f.len())));
        }
        if f[0] != frame_id {
            return Err(err(format!("frame id `{}` does not match `{frame_id}`", f[0])));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
        let bbox = BBox2D::new(num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?);
        let source = f[5].parse().map_err(err)?;
        let score = if f[6] == "-" { None } else { Some(num(f[6])?) };
        out.push(Proposal {
            bbox,
            source,
            cluster_extent: None,
            score,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct ProposalFile<'a> {
    frame_id: &'a str,
    proposals: &'a [Proposal],
}

/// Structured variant of the proposal file.
pub fn proposals_to_json(frame_id: &str, proposals: &[Proposal]) -> String {
    serde_json::to_string_pretty(&ProposalFile { frame_id, proposals }).expect("proposals serialize")
}
