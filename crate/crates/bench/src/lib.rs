//! Fixtures shared by the criterion benches.

use lidarprop::cloud_io::{synth_scene, RandomPedestrians};
use lidarprop::preprocess::{downsample, extract_ground, remove_ground};
use lidarprop::{DownsampleParams, GroundParams, PointCloud, SceneSpec};

/// A synthetic frame with `pedestrians` people on a flat floor.
pub fn scene(seed: u64, pedestrians: usize) -> PointCloud {
    let spec = SceneSpec {
        random: Some(RandomPedestrians {
            min_count: pedestrians,
            max_count: pedestrians,
            ..Default::default()
        }),
        seed,
        ..Default::default()
    };
    synth_scene(&spec).expect("valid scene spec").0
}

/// The cloud the clustering stage sees: downsampled, ground removed.
pub fn above_ground(cloud: &PointCloud) -> PointCloud {
    let sampled = downsample(cloud, &DownsampleParams::default()).expect("downsample");
    let ground = extract_ground(&sampled, &GroundParams::default()).expect("ground");
    remove_ground(&sampled, &ground.ground_indices).expect("remove ground").0
}
