//! Range-dependent downsampling and ground removal.
//!
//! Ground removal follows three steps: the lowest point of every occupied
//! `grid_step` square seeds the floor, points within `seed_band` above their
//! seed join it, and a degree-2 least-squares surface fitted to that floor set
//! decides which points are removed (`removal_band` around the surface).

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud_io::{splitmix64, PointCloud};

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("ground extraction needs a non-empty cloud")]
    EmptyCloud,
    #[error("argument error: index {index} out of range for a cloud of {len} points")]
    IndexOutOfRange { index: usize, len: usize },
}

/// `c0 + c1 x + c2 y + c3 x² + c4 xy + c5 y²`
#[inline]
pub fn surface_height(c: &[f64; 6], x: f64, y: f64) -> f64 {
    c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DownsampleParams {
    /// Point budget of the first radial bin.
    pub density_reference: usize,
    /// Radial bin width (meters).
    pub bin_width: f64,
    pub seed: u64,
}

impl Default for DownsampleParams {
    fn default() -> Self {
        Self {
            density_reference: 60,
            bin_width: 1.0,
            seed: 0,
        }
    }
}

impl DownsampleParams {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.density_reference < 1 {
            return Err(PreprocessError::InvalidParams("density_reference must be >= 1".into()));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(PreprocessError::InvalidParams("bin_width must be > 0".into()));
        }
        Ok(())
    }

    /// Maximum number of points kept in radial bin `bin`. The budget grows
    /// with the square of the bin's distance, compensating the 1/r² falloff
    /// of the return density.
    pub fn bin_cap(&self, bin: usize) -> usize {
        let k = (bin as u128 + 1).pow(2);
        (self.density_reference as u128 * k).min(usize::MAX as u128) as usize
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Radial bin of each point: `floor(sqrt(x²+y²+z²) / bin_width)`.
pub fn radial_bin(xyz: [f64; 3], bin_width: f64) -> usize {
    let r = (xyz[0] * xyz[0] + xyz[1] * xyz[1] + xyz[2] * xyz[2]).sqrt();
    (r / bin_width).floor() as usize
}

/// Indices (ascending) of the points kept by [`downsample`].
pub fn downsample_indices(cloud: &PointCloud, params: &DownsampleParams) -> Result<Vec<usize>, PreprocessError> {
    params.validate()?;
    let mut bins: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        bins.entry(radial_bin(p.xyz(), params.bin_width)).or_default().push(i);
    }
    let base = splitmix64(params.seed ^ fnv1a(cloud.frame_id.as_bytes()));
    let mut keep = vec![false; cloud.len()];
    for (bin, members) in &bins {
        let cap = params.bin_cap(*bin);
        if members.len() <= cap {
            members.iter().for_each(|&i| keep[i] = true);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(base);
        rng.set_stream(*bin as u64);
        for j in rand::seq::index::sample(&mut rng, members.len(), cap) {
            keep[members[j]] = true;
        }
    }
    Ok(keep.iter().enumerate().filter_map(|(i, k)| k.then_some(i)).collect())
}

/// Caps every radial bin at [`DownsampleParams::bin_cap`] points with a
/// seeded uniform subsample. Bins under their cap are left alone and the
/// survivors keep their relative order.
pub fn downsample(cloud: &PointCloud, params: &DownsampleParams) -> Result<PointCloud, PreprocessError> {
    let kept = downsample_indices(cloud, params)?;
    Ok(PointCloud::new(
        cloud.frame_id.clone(),
        kept.into_iter().map(|i| cloud.points[i]).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundParams {
    /// Side of the x–y seeding squares (meters).
    pub grid_step: f64,
    /// Height above a cell's lowest point still counted as floor.
    pub seed_band: f64,
    /// Distance to the fitted surface under which a point is ground.
    pub removal_band: f64,
}

impl Default for GroundParams {
    fn default() -> Self {
        Self {
            grid_step: 0.5,
            seed_band: 0.20,
            removal_band: 0.15,
        }
    }
}

impl GroundParams {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.grid_step) || !ok(self.seed_band) || !ok(self.removal_band) {
            return Err(PreprocessError::InvalidParams(
                "grid_step, seed_band and removal_band must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Fitted ground surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundModel {
    pub coeffs: [f64; 6],
    pub grid_step: f64,
    pub seed_band: f64,
    pub removal_band: f64,
}

impl GroundModel {
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        surface_height(&self.coeffs, x, y)
    }

    pub fn flat(z: f64, params: &GroundParams) -> Self {
        Self {
            coeffs: [z, 0.0, 0.0, 0.0, 0.0, 0.0],
            grid_step: params.grid_step,
            seed_band: params.seed_band,
            removal_band: params.removal_band,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundExtraction {
    pub model: GroundModel,
    /// Ascending indices of points within `removal_band` of the surface.
    pub ground_indices: Vec<usize>,
    /// Points used for the fit (seeds plus their band).
    pub floor_indices: Vec<usize>,
    /// Set when the quadratic fit was rank deficient and a horizontal plane
    /// at the median seed height was used instead.
    pub fallback: bool,
}

fn monomials(degree: usize) -> usize {
    match degree {
        0 => 1,
        1 => 3,
        _ => 6,
    }
}

const RANK_TOL: f64 = 1e-12;

/// Least-squares polynomial surface of degree 0, 1 or 2 through `points`.
///
/// Coordinates are centered and scaled before the normal equations are
/// formed; the solution is mapped back to raw x/y coefficients. Returns
/// `None` when the normal matrix is numerically rank deficient.
pub fn fit_surface(points: &[[f64; 3]], degree: usize) -> Option<[f64; 6]> {
    let k = monomials(degree.min(2));
    if points.len() < k {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let s = points
        .iter()
        .map(|p| (p[0] - mx).abs().max((p[1] - my).abs()))
        .fold(0.0f64, f64::max);
    let s = if s > 0.0 { s } else { 1.0 };

    let mut ata = DMatrix::<f64>::zeros(k, k);
    let mut atz = DVector::<f64>::zeros(k);
    let mut row = [0.0f64; 6];
    for p in points {
        let (u, v) = ((p[0] - mx) / s, (p[1] - my) / s);
        row[..6].copy_from_slice(&[1.0, u, v, u * u, u * v, v * v]);
        for i in 0..k {
            atz[i] += row[i] * p[2];
            for j in i..k {
                ata[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            ata[(i, j)] = ata[(j, i)];
        }
    }
    let eig = ata.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
    if !(hi > 0.0) || lo <= RANK_TOL * hi {
        return None;
    }
    let a = ata.cholesky()?.solve(&atz);
    let mut a6 = [0.0; 6];
    a6[..k].copy_from_slice(a.as_slice());

    let p = 1.0 / s;
    let p2 = p * p;
    Some([
        a6[0] - a6[1] * p * mx - a6[2] * p * my + a6[3] * p2 * mx * mx + a6[4] * p2 * mx * my + a6[5] * p2 * my * my,
        a6[1] * p - 2.0 * a6[3] * p2 * mx - a6[4] * p2 * my,
        a6[2] * p - a6[4] * p2 * mx - 2.0 * a6[5] * p2 * my,
        a6[3] * p2,
        a6[4] * p2,
        a6[5] * p2,
    ])
}

/// Sum of squared vertical residuals of `points` against a surface.
pub fn residual_sum(points: &[[f64; 3]], coeffs: &[f64; 6]) -> f64 {
    points
        .iter()
        .map(|p| (p[2] - surface_height(coeffs, p[0], p[1])).powi(2))
        .sum()
}

/// Lowest point of every occupied grid square, keyed by cell.
pub fn grid_seeds(cloud: &PointCloud, grid_step: f64) -> HashMap<(i64, i64), usize> {
    let mut seeds: HashMap<(i64, i64), usize> = HashMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let cell = cell_of(p.x as f64, p.y as f64, grid_step);
        seeds
            .entry(cell)
            .and_modify(|s| {
                if p.z < cloud.points[*s].z {
                    *s = i;
                }
            })
            .or_insert(i);
    }
    seeds
}

#[inline]
fn cell_of(x: f64, y: f64, step: f64) -> (i64, i64) {
    ((x / step).floor() as i64, (y / step).floor() as i64)
}

pub fn extract_ground(cloud: &PointCloud, params: &GroundParams) -> Result<GroundExtraction, PreprocessError> {
    params.validate()?;
    if cloud.is_empty() {
        return Err(PreprocessError::EmptyCloud);
    }
    let seeds = grid_seeds(cloud, params.grid_step);
    let floor_indices: Vec<usize> = cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let seed = &cloud.points[seeds[&cell_of(p.x as f64, p.y as f64, params.grid_step)]];
            (p.z as f64 - seed.z as f64) <= params.seed_band
        })
        .map(|(i, _)| i)
        .collect();
    let floor: Vec<[f64; 3]> = floor_indices.iter().map(|&i| cloud.points[i].xyz()).collect();

    let (coeffs, fallback) = match fit_surface(&floor, 2) {
        Some(c) if c.iter().all(|v| v.is_finite()) => (c, false),
        _ => {
            let mut zs: Vec<f64> = seeds.values().map(|&i| cloud.points[i].z as f64).collect();
            zs.sort_by(f64::total_cmp);
            let mid = zs.len() / 2;
            let median = if zs.len() % 2 == 0 {
                (zs[mid - 1] + zs[mid]) / 2.0
            } else {
                zs[mid]
            };
            ([median, 0.0, 0.0, 0.0, 0.0, 0.0], true)
        }
    };
    let model = GroundModel {
        coeffs,
        grid_step: params.grid_step,
        seed_band: params.seed_band,
        removal_band: params.removal_band,
    };
    let ground_indices = cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| (p.z as f64 - model.height_at(p.x as f64, p.y as f64)).abs() <= params.removal_band)
        .map(|(i, _)| i)
        .collect();
    Ok(GroundExtraction {
        model,
        ground_indices,
        floor_indices,
        fallback,
    })
}

/// Cloud without the listed points, plus the old → new index map
/// (`None` for removed points).
pub fn remove_ground(
    cloud: &PointCloud,
    ground_indices: &[usize],
) -> Result<(PointCloud, Vec<Option<usize>>), PreprocessError> {
    let mut drop = vec![false; cloud.len()];
    for &i in ground_indices {
        *drop.get_mut(i).ok_or(PreprocessError::IndexOutOfRange {
            index: i,
            len: cloud.len(),
        })? = true;
    }
    let mut mapping = Vec::with_capacity(cloud.len());
    let mut points = Vec::with_capacity(cloud.len().saturating_sub(ground_indices.len()));
    for (p, d) in cloud.points.iter().zip(&drop) {
        if *d {
            mapping.push(None);
        } else {
            mapping.push(Some(points.len()));
            points.push(*p);
        }
    }
    Ok((PointCloud::new(cloud.frame_id.clone(), points), mapping))
}
