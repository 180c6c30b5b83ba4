//! Point cloud ingestion in the KITTI velodyne layout and synthetic scenes.
//!
//! A velodyne `.bin` file is a headerless sequence of records, each made of
//! four little-endian `f32` values: `x y z intensity`. Point order is kept
//! exactly as read because downstream stages refer to points by index.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::CalibrationSet;
use crate::preprocess::surface_height;
use crate::proposals::BBox2D;

const RECORD_BYTES: usize = 16;

/// Largest vertical noise the synthesizer adds to ground points (meters).
pub const MAX_GROUND_JITTER: f64 = 0.02;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("data error: point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("scene spec error: {0}")]
    Spec(String),
}

/// One LiDAR return in the sensor frame: x forward, y left, z up (meters).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    /// Reflectance in `[0, 1]`. Carried through, never used by the pipeline.
    pub intensity: f32,
}

impl Point3 {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Self { x, y, z, intensity }
    }

    #[inline]
    pub fn xyz(&self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(frame_id: impl Into<String>, points: Vec<Point3>) -> Self {
        Self {
            points,
            frame_id: frame_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Decodes a velodyne buffer. Rejects buffers whose length is not a whole
/// number of records and points holding NaN or infinite values.
pub fn decode_kitti_bin(bytes: &[u8], frame_id: &str) -> Result<PointCloud, CloudError> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(CloudError::Format(format!(
            "length {} is not a multiple of {RECORD_BYTES} bytes",
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD_BYTES);
    for (index, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap());
        let p = Point3::new(f(0), f(1), f(2), f(3));
        if !p.is_finite() {
            return Err(CloudError::NonFinite { index });
        }
        points.push(p);
    }
    Ok(PointCloud::new(frame_id, points))
}

pub fn encode_kitti_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD_BYTES);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a velodyne file. The frame id is the file stem (`000042.bin` → `000042`).
pub fn read_kitti_bin(path: impl AsRef<Path>) -> Result<PointCloud, CloudError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CloudError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_kitti_bin(&bytes, &frame_id_of(path))
}

pub fn write_kitti_bin(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<(), CloudError> {
    let path = path.as_ref();
    fs::write(path, encode_kitti_bin(cloud)).map_err(|source| CloudError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn frame_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Synthetic scenes
// ---------------------------------------------------------------------------

/// An axis-aligned pedestrian box standing on the ground surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedestrianSpec {
    /// Footprint center (x, y) in meters.
    pub center: [f64; 2],
    /// Box size (dx, dy, dz) in meters.
    pub extent: [f64; 3],
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutterSpec {
    pub count: usize,
    /// `[xmin, ymin, zmin]`
    pub min: [f64; 3],
    /// `[xmax, ymax, zmax]`
    pub max: [f64; 3],
}

impl Default for ClutterSpec {
    fn default() -> Self {
        Self {
            count: 0,
            min: [2.0, -20.0, -1.5],
            max: [40.0, 20.0, 1.0],
        }
    }
}

/// Per-frame random pedestrian placement used to build multi-frame suites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomPedestrians {
    pub min_count: usize,
    pub max_count: usize,
    pub points: usize,
    /// Forward distance range of footprint centers.
    pub x_range: [f64; 2],
    /// Lateral bound `|y| <= lateral_ratio * x` keeps pedestrians in the camera view.
    pub lateral_ratio: f64,
    /// Minimum distance between two footprint centers.
    pub min_separation: f64,
}

impl Default for RandomPedestrians {
    fn default() -> Self {
        Self {
            min_count: 2,
            max_count: 5,
            points: 300,
            x_range: [7.0, 25.0],
            lateral_ratio: 0.4,
            min_separation: 2.0,
        }
    }
}

/// Parameters of a synthetic LiDAR frame.
///
/// Text form (one `key = value` per line, `#` starts a comment):
///
/// ```text
/// seed = 7
/// ground.coeffs = -1.73 0 0 0 0 0
/// ground.points = 20000
/// ground.region = 2 40 -20 20
/// ground.jitter = 0.02
/// pedestrian = 10 0 0.6 0.6 1.75 300
/// random.count = 2 5
/// clutter.count = 0
/// clutter.region = 2 40 -20 20 -1.5 1
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// `c0 + c1 x + c2 y + c3 x^2 + c4 xy + c5 y^2`
    pub ground_coeffs: [f64; 6],
    pub ground_points: usize,
    /// `[xmin, xmax, ymin, ymax]`
    pub ground_region: [f64; 4],
    pub ground_jitter: f64,
    pub pedestrians: Vec<PedestrianSpec>,
    pub random: Option<RandomPedestrians>,
    pub clutter: ClutterSpec,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            ground_coeffs: [-1.73, 0.0, 0.0, 0.0, 0.0, 0.0],
            ground_points: 20_000,
            ground_region: [2.0, 40.0, -20.0, 20.0],
            ground_jitter: MAX_GROUND_JITTER,
            pedestrians: Vec::new(),
            random: None,
            clutter: ClutterSpec::default(),
            seed: 0,
        }
    }
}

/// Ground truth for one synthesized pedestrian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub center: [f64; 2],
    /// Ground height under the footprint center; the box bottom.
    pub base_z: f64,
    pub extent: [f64; 3],
}

impl GroundTruthObject {
    pub fn min(&self) -> [f64; 3] {
        [
            self.center[0] - self.extent[0] / 2.0,
            self.center[1] - self.extent[1] / 2.0,
            self.base_z,
        ]
    }

    pub fn max(&self) -> [f64; 3] {
        [
            self.center[0] + self.extent[0] / 2.0,
            self.center[1] + self.extent[1] / 2.0,
            self.base_z + self.extent[2],
        ]
    }

    pub fn corners(&self) -> [[f64; 3]; 8] {
        let (lo, hi) = (self.min(), self.max());
        let mut out = [[0.0; 3]; 8];
        for (i, c) in out.iter_mut().enumerate() {
            *c = [
                if i & 1 == 0 { lo[0] } else { hi[0] },
                if i & 2 == 0 { lo[1] } else { hi[1] },
                if i & 4 == 0 { lo[2] } else { hi[2] },
            ];
        }
        out
    }

    /// Image box of the eight projected corners, clipped to the image, and
    /// the fraction of the unclipped box area that falls outside it.
    /// `None` when a corner is behind the camera or nothing is visible.
    pub fn image_box(&self, calib: &CalibrationSet) -> Option<(BBox2D, f64)> {
        let mut raw = BBox2D::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for c in self.corners() {
            let px = calib.project_xyz(c)?;
            raw.left = raw.left.min(px.u);
            raw.right = raw.right.max(px.u);
            raw.top = raw.top.min(px.v);
            raw.bottom = raw.bottom.max(px.v);
        }
        let clipped = raw.clip_to(&calib.image_size.rect());
        if !clipped.is_valid() {
            return None;
        }
        let truncation = (1.0 - clipped.area() / raw.area()).clamp(0.0, 1.0);
        Some((clipped, truncation))
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let (lo, hi) = (self.min(), self.max());
        p.xyz()
            .iter()
            .zip(lo.iter().zip(hi.iter()))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), CloudError> {
        if !(0.0..=MAX_GROUND_JITTER).contains(&self.ground_jitter) {
            return Err(CloudError::Spec(format!(
                "ground.jitter must lie in [0, {MAX_GROUND_JITTER}], got {}",
                self.ground_jitter
            )));
        }
        let r = self.ground_region;
        if !(r[0] < r[1] && r[2] < r[3]) {
            return Err(CloudError::Spec("ground.region must satisfy xmin < xmax and ymin < ymax".into()));
        }
        for (i, p) in self.pedestrians.iter().enumerate() {
            if p.extent.iter().any(|e| !(*e > 0.0)) {
                return Err(CloudError::Spec(format!("pedestrian {i}: extent must be positive on all axes")));
            }
            if p.points == 0 {
                return Err(CloudError::Spec(format!("pedestrian {i}: zero points requested")));
            }
        }
        if let Some(rnd) = &self.random {
            if rnd.min_count > rnd.max_count || rnd.x_range[0] >= rnd.x_range[1] {
                return Err(CloudError::Spec("random: empty count or x range".into()));
            }
            if rnd.max_count > 0 && rnd.points == 0 {
                return Err(CloudError::Spec("random.points must be positive".into()));
            }
        }
        let c = &self.clutter;
        if c.count > 0 && (0..3).any(|i| c.min[i] > c.max[i]) {
            return Err(CloudError::Spec("clutter.region has min > max".into()));
        }
        Ok(())
    }

    /// The concrete scene for frame `index` of a suite: its own seed and, when
    /// random placement is configured, freshly drawn pedestrians.
    pub fn for_frame(&self, index: u64) -> SceneSpec {
        let seed = splitmix64(self.seed ^ splitmix64(index));
        let mut spec = self.clone();
        spec.seed = seed;
        if let Some(rnd) = self.random {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let count = rng.random_range(rnd.min_count..=rnd.max_count);
            let mut placed: Vec<PedestrianSpec> = self.pedestrians.clone();
            let mut tries = 0;
            while placed.len() < self.pedestrians.len() + count && tries < 10_000 {
                tries += 1;
                let x = rng.random_range(rnd.x_range[0]..rnd.x_range[1]);
                let lat = rnd.lateral_ratio * x;
                let y = rng.random_range(-lat..=lat);
                let extent = [
                    rng.random_range(0.45..0.75),
                    rng.random_range(0.45..0.75),
                    rng.random_range(1.5..1.9),
                ];
                let clear = placed.iter().all(|p| {
                    let (ex, ey) = (p.center[0] - x, p.center[1] - y);
                    (ex * ex + ey * ey).sqrt() >= rnd.min_separation
                });
                if clear {
                    placed.push(PedestrianSpec {
                        center: [x, y],
                        extent,
                        points: rnd.points,
                    });
                }
            }
            spec.pedestrians = placed;
            spec.random = None;
        }
        spec
    }

    pub fn parse(text: &str) -> Result<SceneSpec, CloudError> {
        let mut spec = SceneSpec::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| CloudError::Spec(format!("line {}: {msg}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let nums = || -> Result<Vec<f64>, CloudError> {
                value
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| err(format!("`{key}`: bad number `{t}`"))))
                    .collect()
            };
            let fixed = |n: usize| -> Result<Vec<f64>, CloudError> {
                let v = nums()?;
                if v.len() != n {
                    return Err(err(format!("`{key}` expects {n} values, got {}", v.len())));
                }
                Ok(v)
            };
            let count = |v: f64| -> Result<usize, CloudError> {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(err(format!("`{key}` expects a non-negative integer")));
                }
                Ok(v as usize)
            };
            match key {
                "seed" => {
                    spec.seed = value
                        .trim()
                        .parse()
                        .map_err(|_| err(format!("bad seed `{}`", value.trim())))?
                }
                "ground.coeffs" => spec.ground_coeffs.copy_from_slice(&fixed(6)?),
                "ground.points" => spec.ground_points = count(fixed(1)?[0])?,
                "ground.region" => spec.ground_region.copy_from_slice(&fixed(4)?),
                "ground.jitter" => spec.ground_jitter = fixed(1)?[0],
                "pedestrian" => {
                    let v = fixed(6)?;
                    spec.pedestrians.push(PedestrianSpec {
                        center: [v[0], v[1]],
                        extent: [v[2], v[3], v[4]],
                        points: count(v[5])?,
                    });
                }
                "random.count" => {
                    let v = fixed(2)?;
                    let (lo, hi) = (count(v[0])?, count(v[1])?);
                    let r = spec_random(&mut spec.random);
                    r.min_count = lo;
                    r.max_count = hi;
                }
                "random.points" => {
                    let n = count(fixed(1)?[0])?;
                    spec_random(&mut spec.random).points = n;
                }
                "random.x_range" => {
                    let v = fixed(2)?;
                    spec_random(&mut spec.random).x_range = [v[0], v[1]];
                }
                "random.lateral_ratio" => {
                    let v = fixed(1)?[0];
                    spec_random(&mut spec.random).lateral_ratio = v;
                }
                "random.min_separation" => {
                    let v = fixed(1)?[0];
                    spec_random(&mut spec.random).min_separation = v;
                }
                "clutter.count" => spec.clutter.count = count(fixed(1)?[0])?,
                "clutter.region" => {
                    let v = fixed(6)?;
                    spec.clutter.min = [v[0], v[2], v[4]];
                    spec.clutter.max = [v[1], v[3], v[5]];
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SceneSpec, CloudError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| CloudError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "ground.coeffs = {}", join(&self.ground_coeffs));
        let _ = writeln!(s, "ground.points = {}", self.ground_points);
        let _ = writeln!(s, "ground.region = {}", join(&self.ground_region));
        let _ = writeln!(s, "ground.jitter = {}", self.ground_jitter);
        for p in &self.pedestrians {
            let _ = writeln!(
                s,
                "pedestrian = {} {}",
                join(&[p.center[0], p.center[1], p.extent[0], p.extent[1], p.extent[2]]),
                p.points
            );
        }
        if let Some(r) = &self.random {
            let _ = writeln!(s, "random.count = {} {}", r.min_count, r.max_count);
            let _ = writeln!(s, "random.points = {}", r.points);
            let _ = writeln!(s, "random.x_range = {}", join(&r.x_range));
            let _ = writeln!(s, "random.lateral_ratio = {}", r.lateral_ratio);
            let _ = writeln!(s, "random.min_separation = {}", r.min_separation);
        }
        let c = &self.clutter;
        let _ = writeln!(s, "clutter.count = {}", c.count);
        let _ = writeln!(
            s,
            "clutter.region = {}",
            join(&[c.min[0], c.max[0], c.min[1], c.max[1], c.min[2], c.max[2]])
        );
        s
    }
}

fn spec_random(slot: &mut Option<RandomPedestrians>) -> &mut RandomPedestrians {
    slot.get_or_insert_with(RandomPedestrians::default)
}

// Margin keeping f32-rounded samples inside their f64 boxes.
const BOX_MARGIN: f64 = 1e-5;

/// Builds a deterministic synthetic frame.
///
/// Ground points lie on the polynomial surface plus uniform vertical noise of
/// at most `ground_jitter`; pedestrian points are uniform inside their boxes,
/// whose bottom sits on the surface at the footprint center. The output cloud
/// holds ground points first, then pedestrians in declaration order, then
/// clutter. Random placement is resolved by [`SceneSpec::for_frame`]; a spec
/// still carrying it is realized as frame 0.
pub fn synth_scene(spec: &SceneSpec) -> Result<(PointCloud, Vec<GroundTruthObject>), CloudError> {
    spec.validate()?;
    if spec.random.is_some() {
        return synth_scene(&spec.for_frame(0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::with_capacity(
        spec.ground_points + spec.pedestrians.iter().map(|p| p.points).sum::<usize>() + spec.clutter.count,
    );

    let [x0, x1, y0, y1] = spec.ground_region;
    for _ in 0..spec.ground_points {
        let x = rng.random_range(x0..x1);
        let y = rng.random_range(y0..y1);
        // evaluate the surface at the stored (f32) coordinates
        let x = x as f32 as f64;
        let y = y as f32 as f64;
        let base = surface_height(&spec.ground_coeffs, x, y);
        let noise = if spec.ground_jitter > 0.0 {
            rng.random_range(-spec.ground_jitter..=spec.ground_jitter)
        } else {
            0.0
        };
        points.push(Point3::new(x as f32, y as f32, (base + noise) as f32, rng.random_range(0.0..0.3)));
    }

    let mut truth = Vec::with_capacity(spec.pedestrians.len());
    for ped in &spec.pedestrians {
        let obj = GroundTruthObject {
            center: ped.center,
            base_z: surface_height(&spec.ground_coeffs, ped.center[0], ped.center[1]),
            extent: ped.extent,
        };
        let (lo, hi) = (obj.min(), obj.max());
        for _ in 0..ped.points {
            let mut c = [0.0f32; 3];
            for axis in 0..3 {
                let m = BOX_MARGIN.min((hi[axis] - lo[axis]) / 4.0);
                c[axis] = rng.random_range(lo[axis] + m..=hi[axis] - m) as f32;
            }
            points.push(Point3::new(c[0], c[1], c[2], rng.random_range(0.2..1.0)));
        }
        truth.push(obj);
    }

    let cl = &spec.clutter;
    for _ in 0..cl.count {
        let mut c = [0.0f32; 3];
        for axis in 0..3 {
            c[axis] = rng.random_range(cl.min[axis]..=cl.max[axis]) as f32;
        }
        points.push(Point3::new(c[0], c[1], c[2], rng.random_range(0.0..1.0)));
    }

    Ok((PointCloud::new(format!("synth-{}", spec.seed), points), truth))
}
