//! Pipeline configuration file: one `section.key = value` per line.
//!
//! ```text
//! # comments start with '#'
//! dataset.root = /data/kitti/training
//! dataset.image_size = 1242x375
//! run.seed = 7
//! dbscan.eps = 0.5
//! validation.dz = 0.4 2.2
//! sliding.heights = 32 48 72 108 162 243
//! ```
//!
//! Unknown keys, repeated keys and values that break a module invariant are
//! rejected at load time. [`PipelineConfig::to_text`] writes every key, and
//! parsing that text yields an identical config.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use lidarprop::calib::{ImageSize, DEFAULT_IMAGE_SIZE};
use lidarprop::evaluation::DEFAULT_IOU_THRESHOLD;
use lidarprop::proposals::{AxisRange, PipelineParams, SlidingWindowParams};

/// Environment variable consulted for the dataset root when neither the
/// command line nor the config file names one.
pub const DATASET_ROOT_ENV: &str = "LIDARPROP_DATASET_ROOT";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub root: Option<PathBuf>,
    pub velodyne_dir: String,
    pub calib_dir: String,
    pub label_dir: String,
    pub image_size: ImageSize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            root: None,
            velodyne_dir: "velodyne".into(),
            calib_dir: "calib".into(),
            label_dir: "label_2".into(),
            image_size: DEFAULT_IMAGE_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub classes: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            classes: vec!["Pedestrian".into()],
        }
    }
}

/// Everything a run needs. The seed lives in `pipeline.downsample.seed`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    pub pipeline: PipelineParams,
    pub sliding: SlidingWindowParams,
    pub eval: EvalConfig,
    /// Frame worker threads; 0 picks the number of cores.
    pub workers: usize,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset_root: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub image_size: Option<ImageSize>,
}

pub const KEYS: &[&str] = &[
    "dataset.root",
    "dataset.velodyne_dir",
    "dataset.calib_dir",
    "dataset.label_dir",
    "dataset.image_size",
    "run.seed",
    "run.workers",
    "downsample.density_reference",
    "downsample.bin_width",
    "ground.grid_step",
    "ground.seed_band",
    "ground.removal_band",
    "dbscan.eps",
    "dbscan.min_pts",
    "validation.dx",
    "validation.dy",
    "validation.dz",
    "proposals.aspect_ratio",
    "sliding.heights",
    "sliding.aspect_ratio",
    "sliding.stride_x",
    "sliding.stride_y",
    "eval.iou_threshold",
    "eval.classes",
];

/// Parses `WxH`, e.g. `1242x375`.
pub fn parse_image_size(s: &str) -> Result<ImageSize> {
    let (w, h) = s
        .trim()
        .split_once(['x', 'X'])
        .ok_or_else(|| anyhow!("image size `{s}` is not of the form WxH"))?;
    let w: u32 = w.trim().parse().with_context(|| format!("image width in `{s}`"))?;
    let h: u32 = h.trim().parse().with_context(|| format!("image height in `{s}`"))?;
    if w == 0 || h == 0 {
        bail!("image size `{s}` must be positive");
    }
    Ok(ImageSize::new(w, h))
}

fn scalar<T: FromStr>(v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| anyhow!("bad value `{v}`"))
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>> {
    v.split_whitespace().map(scalar).collect()
}

fn range(v: &str) -> Result<AxisRange> {
    match list::<f64>(v)?.as_slice() {
        [lo, hi] => Ok(AxisRange::new(*lo, *hi)),
        _ => bail!("expected `min max`, got `{v}`"),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

impl PipelineConfig {
    pub fn seed(&self) -> u64 {
        self.pipeline.downsample.seed
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `section.key = value`", n + 1))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) && KEYS.contains(&key) {
                bail!("line {}: `{key}` given twice", n + 1);
            }
            cfg.set(key, value.trim()).with_context(|| format!("line {}: `{key}`", n + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = &mut self.pipeline;
        match key {
            "dataset.root" => self.dataset.root = (!v.is_empty()).then(|| PathBuf::from(v)),
            "dataset.velodyne_dir" => self.dataset.velodyne_dir = v.into(),
            "dataset.calib_dir" => self.dataset.calib_dir = v.into(),
            "dataset.label_dir" => self.dataset.label_dir = v.into(),
            "dataset.image_size" => self.dataset.image_size = parse_image_size(v)?,
            "run.seed" => p.downsample.seed = scalar(v)?,
            "run.workers" => self.workers = scalar(v)?,
            "downsample.density_reference" => p.downsample.density_reference = scalar(v)?,
            "downsample.bin_width" => p.downsample.bin_width = scalar(v)?,
            "ground.grid_step" => p.ground.grid_step = scalar(v)?,
            "ground.seed_band" => p.ground.seed_band = scalar(v)?,
            "ground.removal_band" => p.ground.removal_band = scalar(v)?,
            "dbscan.eps" => p.dbscan.eps = scalar(v)?,
            "dbscan.min_pts" => p.dbscan.min_pts = scalar(v)?,
            "validation.dx" => p.validation.dx = range(v)?,
            "validation.dy" => p.validation.dy = range(v)?,
            "validation.dz" => p.validation.dz = range(v)?,
            "proposals.aspect_ratio" => p.aspect_ratio = scalar(v)?,
            "sliding.heights" => self.sliding.heights = list(v)?,
            "sliding.aspect_ratio" => self.sliding.aspect_ratio = scalar(v)?,
            "sliding.stride_x" => self.sliding.stride_x = scalar(v)?,
            "sliding.stride_y" => self.sliding.stride_y = scalar(v)?,
            "eval.iou_threshold" => self.eval.iou_threshold = scalar(v)?,
            "eval.classes" => self.eval.classes = list(v)?,
            _ => bail!("unknown key (known keys: {})", KEYS.join(", ")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.sliding.validate()?;
        let t = self.eval.iou_threshold;
        if !(t > 0.0 && t < 1.0) {
            bail!("eval.iou_threshold must lie in (0, 1), got {t}");
        }
        if self.eval.classes.is_empty() {
            bail!("eval.classes must name at least one class");
        }
        for (key, dir) in [
            ("dataset.velodyne_dir", &self.dataset.velodyne_dir),
            ("dataset.calib_dir", &self.dataset.calib_dir),
            ("dataset.label_dir", &self.dataset.label_dir),
        ] {
            if dir.is_empty() {
                bail!("{key} must not be empty");
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let p = &self.pipeline;
        let d = &self.dataset;
        let r = |a: &AxisRange| format!("{} {}", a.min, a.max);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv(
            "dataset.root",
            d.root.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        kv("dataset.velodyne_dir", d.velodyne_dir.clone());
        kv("dataset.calib_dir", d.calib_dir.clone());
        kv("dataset.label_dir", d.label_dir.clone());
        kv("dataset.image_size", format!("{}x{}", d.image_size.width, d.image_size.height));
        kv("run.seed", p.downsample.seed.to_string());
        kv("run.workers", self.workers.to_string());
        kv("downsample.density_reference", p.downsample.density_reference.to_string());
        kv("downsample.bin_width", p.downsample.bin_width.to_string());
        kv("ground.grid_step", p.ground.grid_step.to_string());
        kv("ground.seed_band", p.ground.seed_band.to_string());
        kv("ground.removal_band", p.ground.removal_band.to_string());
        kv("dbscan.eps", p.dbscan.eps.to_string());
        kv("dbscan.min_pts", p.dbscan.min_pts.to_string());
        kv("validation.dx", r(&p.validation.dx));
        kv("validation.dy", r(&p.validation.dy));
        kv("validation.dz", r(&p.validation.dz));
        kv("proposals.aspect_ratio", p.aspect_ratio.to_string());
        kv("sliding.heights", join(&self.sliding.heights));
        kv("sliding.aspect_ratio", self.sliding.aspect_ratio.to_string());
        kv("sliding.stride_x", self.sliding.stride_x.to_string());
        kv("sliding.stride_y", self.sliding.stride_y.to_string());
        kv("eval.iou_threshold", self.eval.iou_threshold.to_string());
        kv("eval.classes", join(&self.eval.classes));
        s
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(root) = &o.dataset_root {
            self.dataset.root = Some(root.clone());
        }
        if let Some(seed) = o.seed {
            self.pipeline.downsample.seed = seed;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(size) = o.image_size {
            self.dataset.image_size = size;
        }
        self.validate()
    }

    /// Dataset root from the config, falling back to [`DATASET_ROOT_ENV`].
    pub fn dataset_root(&self) -> Result<PathBuf> {
        if let Some(root) = &self.dataset.root {
            return Ok(root.clone());
        }
        match std::env::var_os(DATASET_ROOT_ENV) {
            Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
            _ => bail!("no dataset root: pass --dataset-root, set dataset.root, or export {DATASET_ROOT_ENV}"),
        }
    }

    pub fn velodyne_dir(&self) -> Result<PathBuf> {
        Ok(self.dataset_root()?.join(&self.dataset.velodyne_dir))
    }

    pub fn calib_dir(&self) -> Result<PathBuf> {
        Ok(self.dataset_root()?.join(&self.dataset.calib_dir))
    }

    pub fn label_dir(&self) -> Result<PathBuf> {
        Ok(self.dataset_root()?.join(&self.dataset.label_dir))
    }

    pub fn class_refs(&self) -> Vec<&str> {
        self.eval.classes.iter().map(String::as_str).collect()
    }
}
