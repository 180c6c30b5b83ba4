//! KITTI calibration files and LiDAR → image projection.
//!
//! A velodyne point `p` maps to rectified camera coordinates with
//! `x_cam = R0_rect · (Tr_velo_to_cam · [p, 1])` and to pixels with
//! `P2 · [x_cam, 1]` followed by the perspective division. Camera 2 (left
//! color) is the reference camera.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use thiserror::Error;

use crate::cloud_io::Point3;
use crate::proposals::BBox2D;

pub const DEFAULT_IMAGE_SIZE: ImageSize = ImageSize {
    width: 1242,
    height: 375,
};

const ORTHONORMAL_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: missing key `{0}`")]
    MissingKey(&'static str),
    #[error("format error: `{key}` expects {expected} values, got {got}")]
    ElementCount {
        key: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("format error: `{key}` has a non-numeric value `{token}`")]
    BadNumber { key: String, token: String },
    #[error("invalid calibration: focal lengths must be positive (P2[0][0]={fx}, P2[1][1]={fy})")]
    Focal { fx: f64, fy: f64 },
    #[error("argument error: {0}")]
    Argument(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    /// The full-image rectangle.
    pub fn rect(&self) -> BBox2D {
        BBox2D::new(0.0, 0.0, self.width as f64, self.height as f64)
    }
}

impl Default for ImageSize {
    fn default() -> Self {
        DEFAULT_IMAGE_SIZE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub u: f64,
    pub v: f64,
    /// Forward distance in the rectified camera frame (meters).
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    /// Rectified projection of camera 2, pixel units.
    pub p2: Matrix3x4<f64>,
    pub r_rect: Matrix3<f64>,
    /// Rigid velodyne → (unrectified) camera transform, meters.
    pub velo_to_cam: Matrix3x4<f64>,
    pub image_size: ImageSize,
}

impl CalibrationSet {
    /// Builds a set and checks the focal lengths. A rectification matrix that
    /// is not orthonormal is accepted with a warning.
    pub fn new(
        p2: Matrix3x4<f64>,
        r_rect: Matrix3<f64>,
        velo_to_cam: Matrix3x4<f64>,
        image_size: ImageSize,
    ) -> Result<Self, CalibError> {
        let (fx, fy) = (p2[(0, 0)], p2[(1, 1)]);
        if !(fx > 0.0 && fy > 0.0) {
            return Err(CalibError::Focal { fx, fy });
        }
        let dev = (r_rect.transpose() * r_rect - Matrix3::identity()).abs().max();
        if dev > ORTHONORMAL_TOL {
            warn!("R0_rect is not orthonormal (max |RᵀR - I| = {dev:.3e})");
        }
        Ok(Self {
            p2,
            r_rect,
            velo_to_cam,
            image_size,
        })
    }

    /// Calibration of KITTI raw drive 2011_09_26, used for synthetic datasets.
    pub fn kitti_reference() -> Self {
        Self::new(
            Matrix3x4::from_row_slice(&[
                7.215377e2, 0.0, 6.095593e2, 4.485728e1, //
                0.0, 7.215377e2, 1.728540e2, 2.163791e-1, //
                0.0, 0.0, 1.0, 2.745884e-3,
            ]),
            Matrix3::from_row_slice(&[
                9.999239e-1, 9.837760e-3, -7.445048e-3, //
                -9.869795e-3, 9.999421e-1, -4.278459e-3, //
                7.402527e-3, 4.351614e-3, 9.999631e-1,
            ]),
            Matrix3x4::from_row_slice(&[
                7.533745e-3, -9.999714e-1, -6.166020e-4, -4.069766e-3, //
                1.480249e-2, 7.280733e-4, -9.998902e-1, -7.631618e-2, //
                9.998621e-1, 7.523790e-3, 1.480755e-2, -2.717806e-1,
            ]),
            DEFAULT_IMAGE_SIZE,
        )
        .expect("reference calibration is valid")
    }

    pub fn with_image_size(mut self, size: ImageSize) -> Self {
        self.image_size = size;
        self
    }

    /// Velodyne point → rectified camera frame.
    pub fn to_camera(&self, xyz: [f64; 3]) -> Vector3<f64> {
        let cam = self.velo_to_cam * Vector4::new(xyz[0], xyz[1], xyz[2], 1.0);
        self.r_rect * cam
    }

    /// Projects a velodyne-frame position. `None` when the point is not
    /// strictly in front of the camera.
    pub fn project_xyz(&self, xyz: [f64; 3]) -> Option<PixelPoint> {
        let cam = self.to_camera(xyz);
        if cam.z <= 0.0 {
            return None;
        }
        let h = self.p2 * cam.push(1.0);
        if h.z <= 0.0 {
            return None;
        }
        Some(PixelPoint {
            u: h.x / h.z,
            v: h.y / h.z,
            depth: cam.z,
        })
    }

    /// KITTI text form of the three consumed matrices. Values are printed in
    /// shortest round-trip notation, so parsing the output is lossless.
    pub fn to_kitti_string(&self) -> String {
        let row = |vals: Vec<f64>| vals.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ");
        let rows34 = |m: &Matrix3x4<f64>| row((0..3).flat_map(|r| (0..4).map(move |c| m[(r, c)])).collect());
        let mut s = String::new();
        let _ = writeln!(s, "P2: {}", rows34(&self.p2));
        let _ = writeln!(
            s,
            "R0_rect: {}",
            row((0..3).flat_map(|r| (0..3).map(move |c| self.r_rect[(r, c)])).collect())
        );
        let _ = writeln!(s, "Tr_velo_to_cam: {}", rows34(&self.velo_to_cam));
        s
    }
}

fn values_for(text: &str, key: &'static str, expected: usize) -> Result<Vec<f64>, CalibError> {
    let line = text
        .lines()
        .find_map(|l| {
            let (k, rest) = l.split_once(':')?;
            (k.trim() == key).then_some(rest)
        })
        .ok_or(CalibError::MissingKey(key))?;
    let vals = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|_| CalibError::BadNumber {
                key: key.to_string(),
                token: t.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if vals.len() != expected {
        return Err(CalibError::ElementCount {
            key,
            expected,
            got: vals.len(),
        });
    }
    Ok(vals)
}

/// Parses the text of a KITTI object calibration file. Keys other than
/// `P2`, `R0_rect` and `Tr_velo_to_cam` are ignored.
pub fn parse_calib_str(text: &str, image_size: ImageSize) -> Result<CalibrationSet, CalibError> {
    let p2 = values_for(text, "P2", 12)?;
    let r0 = values_for(text, "R0_rect", 9)?;
    let tr = values_for(text, "Tr_velo_to_cam", 12)?;
    CalibrationSet::new(
        Matrix3x4::from_row_slice(&p2),
        Matrix3::from_row_slice(&r0),
        Matrix3x4::from_row_slice(&tr),
        image_size,
    )
}

/// Reads a calibration file with the default 1242×375 image size.
pub fn parse_calib(path: impl AsRef<Path>) -> Result<CalibrationSet, CalibError> {
    parse_calib_with_size(path, DEFAULT_IMAGE_SIZE)
}

pub fn parse_calib_with_size(path: impl AsRef<Path>, image_size: ImageSize) -> Result<CalibrationSet, CalibError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CalibError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_calib_str(&text, image_size)
}

pub fn project(point: &Point3, calib: &CalibrationSet) -> Option<PixelPoint> {
    calib.project_xyz(point.xyz())
}

/// Image box spanned by the in-front projections of `points`.
///
/// Returns `None` when fewer than two points are in front of the camera or
/// when the box does not overlap the image at all. The box is not clipped.
pub fn project_cluster_bbox(points: &[Point3], calib: &CalibrationSet) -> Result<Option<BBox2D>, CalibError> {
    if points.is_empty() {
        return Err(CalibError::Argument("project_cluster_bbox needs at least one point"));
    }
    let mut visible = 0usize;
    let (mut l, mut t, mut r, mut b) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for px in points.iter().filter_map(|p| project(p, calib)) {
        visible += 1;
        l = l.min(px.u);
        r = r.max(px.u);
        t = t.min(px.v);
        b = b.max(px.v);
    }
    if visible < 2 {
        return Ok(None);
    }
    let bbox = BBox2D::new(l, t, r, b);
    let img = calib.image_size.rect();
    let overlaps = bbox.left < img.right && bbox.right > img.left && bbox.top < img.bottom && bbox.bottom > img.top;
    Ok(overlaps.then_some(bbox))
}
