//! `synth`: a KITTI-shaped synthetic dataset.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use lidarprop::calib::CalibrationSet;
use lidarprop::cloud_io::{write_kitti_bin, SceneSpec};
use lidarprop::evaluation::format_label_line;

use super::{default_scene, synth_frame};
use crate::config::PipelineConfig;
use crate::frames::{kitti_id, run_ordered};

pub const SCENE_FILE: &str = "scene.txt";

#[derive(Debug, Clone)]
pub struct SynthArgs {
    /// Scene description; the default suite scene when absent.
    pub spec: Option<PathBuf>,
    pub out: PathBuf,
    pub count: u64,
    /// Replaces the seed of the scene file.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthSummary {
    pub frames: u64,
    pub labels: usize,
}

pub fn run(cfg: &PipelineConfig, args: &SynthArgs) -> Result<SynthSummary> {
    let mut spec = match &args.spec {
        Some(path) => SceneSpec::load(path)?,
        None => default_scene(cfg.seed()),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let calib = CalibrationSet::kitti_reference().with_image_size(cfg.dataset.image_size);
    let dirs = [
        args.out.join(&cfg.dataset.velodyne_dir),
        args.out.join(&cfg.dataset.calib_dir),
        args.out.join(&cfg.dataset.label_dir),
    ];
    for d in &dirs {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let scene_path = args.out.join(SCENE_FILE);
    fs::write(&scene_path, spec.to_text()).with_context(|| format!("writing {}", scene_path.display()))?;
    let calib_text = calib.to_kitti_string();

    let indices: Vec<u64> = (0..args.count).collect();
    let written = run_ordered(cfg.workers, &indices, |&k| -> Result<usize> {
        let id = kitti_id(k);
        let (cloud, labels) = synth_frame(&spec, k, &calib, &id)?;
        write_kitti_bin(&cloud, dirs[0].join(format!("{id}.bin")))?;
        let calib_path = dirs[1].join(format!("{id}.txt"));
        fs::write(&calib_path, &calib_text).with_context(|| format!("writing {}", calib_path.display()))?;
        let mut text = String::new();
        for l in &labels {
            text.push_str(&format_label_line(&l.label, l.dims_hwl, l.location));
            text.push('\n');
        }
        let label_path = dirs[2].join(format!("{id}.txt"));
        fs::write(&label_path, text).with_context(|| format!("writing {}", label_path.display()))?;
        Ok(labels.len())
    })?;
    let labels = written.into_iter().sum::<Result<usize>>()?;
    Ok(SynthSummary {
        frames: args.count,
        labels,
    })
}
