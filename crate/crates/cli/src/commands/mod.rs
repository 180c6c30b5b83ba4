pub mod bench;
pub mod eval;
pub mod plot;
pub mod propose;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use lidarprop::calib::{parse_calib_with_size, CalibrationSet};
use lidarprop::cloud_io::{read_kitti_bin, synth_scene, SceneSpec};
use lidarprop::evaluation::{GroundTruthLabel, LabelSet};
use lidarprop::PointCloud;

use crate::config::PipelineConfig;

/// Region extraction scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Clustering,
    Sliding,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Clustering => "clustering",
            Scheme::Sliding => "sliding",
        })
    }
}

impl FromStr for Scheme {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clustering" => Ok(Scheme::Clustering),
            "sliding" => Ok(Scheme::Sliding),
            _ => bail!("unknown scheme `{s}` (expected clustering or sliding)"),
        }
    }
}

/// Velodyne scan and calibration of one dataset frame.
pub fn load_frame(cfg: &PipelineConfig, id: &str) -> Result<(PointCloud, CalibrationSet)> {
    let bin = cfg.velodyne_dir()?.join(format!("{id}.bin"));
    let cloud = read_kitti_bin(&bin).with_context(|| format!("reading scan {}", bin.display()))?;
    let calib_path = cfg.calib_dir()?.join(format!("{id}.txt"));
    let calib = parse_calib_with_size(&calib_path, cfg.dataset.image_size)
        .with_context(|| format!("reading calibration {}", calib_path.display()))?;
    Ok((cloud, calib))
}

/// Default scene for synthetic suites: clean ground plus 2–5 randomly
/// placed pedestrians per frame.
pub fn default_scene(seed: u64) -> SceneSpec {
    SceneSpec {
        random: Some(Default::default()),
        seed,
        ..Default::default()
    }
}

/// A synthesized label with the 3D fields of a KITTI label line.
#[derive(Debug, Clone)]
pub struct SynthLabel {
    pub label: GroundTruthLabel,
    /// Height, width, length in meters.
    pub dims_hwl: [f64; 3],
    /// Bottom center in the rectified camera frame.
    pub location: [f64; 3],
}

/// Frame `index` of a synthetic suite with the labels visible in the image.
pub fn synth_frame(
    spec: &SceneSpec,
    index: u64,
    calib: &CalibrationSet,
    frame_id: &str,
) -> Result<(PointCloud, Vec<SynthLabel>)> {
    let (mut cloud, truth) = synth_scene(&spec.for_frame(index))?;
    cloud.frame_id = frame_id.to_string();
    let labels = truth
        .iter()
        .filter_map(|obj| {
            let (bbox, truncation) = obj.image_box(calib)?;
            let bottom = calib.to_camera([obj.center[0], obj.center[1], obj.base_z]);
            Some(SynthLabel {
                label: GroundTruthLabel {
                    frame_id: frame_id.to_string(),
                    class: "Pedestrian".into(),
                    bbox,
                    truncation,
                    occlusion: 0,
                },
                dims_hwl: [obj.extent[2], obj.extent[1], obj.extent[0]],
                location: [bottom[0], bottom[1], bottom[2]],
            })
        })
        .collect();
    Ok((cloud, labels))
}

pub fn label_set(labels: &[SynthLabel]) -> LabelSet {
    LabelSet {
        labels: labels.iter().map(|l| l.label.clone()).collect(),
        dont_care: Vec::new(),
    }
}
