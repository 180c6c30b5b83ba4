//! DBSCAN over 3D points backed by a uniform grid.
//!
//! Neighborhoods are closed Euclidean balls (`distance <= eps`) and a point
//! counts itself as a neighbor. Clusters are numbered in the order their
//! first core point is met while scanning indices upward, and every cluster
//! is fully expanded before the scan resumes, so a border point reachable
//! from several clusters belongs to the lowest-numbered one. Groups left with
//! fewer than `min_pts` members are reported as noise and do not take an id.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud_io::{Point3, PointCloud};

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("argument error: cannot summarize an empty index set")]
    EmptyCluster,
    #[error("argument error: index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    /// Neighborhood radius (meters).
    pub eps: f64,
    /// Neighbors (self included) a point needs to be a core point.
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self { eps: 0.5, min_pts: 10 }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(ClusterError::InvalidParams("eps must be > 0".into()));
        }
        if self.min_pts < 1 {
            return Err(ClusterError::InvalidParams("min_pts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Axis-aligned extents of a point group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent3 {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Extent3 {
    pub fn dx(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn dy(&self) -> f64 {
        self.max[1] - self.min[1]
    }

    pub fn dz(&self) -> f64 {
        self.max[2] - self.min[2]
    }

    pub fn size(&self) -> [f64; 3] {
        [self.dx(), self.dy(), self.dz()]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: u32,
    /// Ascending indices into the clustered cloud.
    pub point_indices: Vec<usize>,
    pub extent: Extent3,
    pub centroid: [f64; 3],
}

/// Per-axis bounds and mean position of the selected points.
pub fn summarize_cluster(cloud: &PointCloud, id: u32, indices: &[usize]) -> Result<Cluster, ClusterError> {
    if indices.is_empty() {
        return Err(ClusterError::EmptyCluster);
    }
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    let mut sum = [0.0f64; 3];
    for &i in indices {
        let p = cloud
            .points
            .get(i)
            .ok_or(ClusterError::IndexOutOfRange {
                index: i,
                len: cloud.len(),
            })?
            .xyz();
        for a in 0..3 {
            min[a] = min[a].min(p[a]);
            max[a] = max[a].max(p[a]);
            sum[a] += p[a];
        }
    }
    let n = indices.len() as f64;
    let mut centroid = sum.map(|s| s / n);
    // keep the mean inside the box despite summation rounding
    for a in 0..3 {
        centroid[a] = centroid[a].clamp(min[a], max[a]);
    }
    Ok(Cluster {
        id,
        point_indices: indices.to_vec(),
        extent: Extent3 { min, max },
        centroid,
    })
}

type CellKey = (i64, i64, i64);

/// Uniform grid over a point set. Immutable once built.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    cell: f64,
    coords: Vec<[f64; 3]>,
    cells: HashMap<CellKey, Vec<usize>>,
}

impl SpatialIndex {
    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn occupied_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn cell_of(&self, p: [f64; 3]) -> CellKey {
        key_of(p, self.cell)
    }

    /// Indices (ascending) of the points with `|p - center| <= radius`.
    pub fn radius_query(&self, center: [f64; 3], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_query_into(center, radius, &mut out);
        out
    }

    fn radius_query_into(&self, center: [f64; 3], radius: f64, out: &mut Vec<usize>) {
        out.clear();
        if self.coords.is_empty() || !(radius >= 0.0) {
            return;
        }
        let r2 = radius * radius;
        let lo = key_of([center[0] - radius, center[1] - radius, center[2] - radius], self.cell);
        let hi = key_of([center[0] + radius, center[1] + radius, center[2] + radius], self.cell);
        let span = |a: i64, b: i64| (b - a + 1).max(0) as u128;
        let boxed = span(lo.0, hi.0) * span(lo.1, hi.1) * span(lo.2, hi.2);
        let mut visit = |members: &Vec<usize>| {
            for &i in members {
                if dist2(self.coords[i], center) <= r2 {
                    out.push(i);
                }
            }
        };
        if boxed > self.cells.len() as u128 {
            for (k, members) in &self.cells {
                if (lo.0..=hi.0).contains(&k.0) && (lo.1..=hi.1).contains(&k.1) && (lo.2..=hi.2).contains(&k.2) {
                    visit(members);
                }
            }
        } else {
            for x in lo.0..=hi.0 {
                for y in lo.1..=hi.1 {
                    for z in lo.2..=hi.2 {
                        if let Some(members) = self.cells.get(&(x, y, z)) {
                            visit(members);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

#[inline]
fn key_of(p: [f64; 3], cell: f64) -> CellKey {
    (
        (p[0] / cell).floor() as i64,
        (p[1] / cell).floor() as i64,
        (p[2] / cell).floor() as i64,
    )
}

#[inline]
pub fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

pub fn build_index(cloud: &PointCloud, cell: f64) -> Result<SpatialIndex, ClusterError> {
    build_index_from(&cloud.points, cell)
}

pub fn build_index_from(points: &[Point3], cell: f64) -> Result<SpatialIndex, ClusterError> {
    if !(cell > 0.0 && cell.is_finite()) {
        return Err(ClusterError::InvalidParams("cell size must be > 0".into()));
    }
    let coords: Vec<[f64; 3]> = points.iter().map(Point3::xyz).collect();
    let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
    for (i, p) in coords.iter().enumerate() {
        cells.entry(key_of(*p, cell)).or_default().push(i);
    }
    Ok(SpatialIndex { cell, coords, cells })
}

pub fn radius_query(index: &SpatialIndex, center: &Point3, radius: f64) -> Vec<usize> {
    index.radius_query(center.xyz(), radius)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbscanResult {
    pub clusters: Vec<Cluster>,
    /// Ascending indices of points in no cluster.
    pub noise: Vec<usize>,
}

impl DbscanResult {
    /// Cluster id per point, `None` for noise.
    pub fn labels(&self, len: usize) -> Vec<Option<u32>> {
        let mut out = vec![None; len];
        for c in &self.clusters {
            for &i in &c.point_indices {
                out[i] = Some(c.id);
            }
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq)]
enum State {
    Unvisited,
    Noise,
    Member(u32),
}

pub fn dbscan(cloud: &PointCloud, params: &DbscanParams) -> Result<DbscanResult, ClusterError> {
    params.validate()?;
    let index = build_index(cloud, params.eps)?;
    let n = cloud.len();
    let mut state = vec![State::Unvisited; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut neighbors = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..n {
        if state[start] != State::Unvisited {
            continue;
        }
        index.radius_query_into(index.coords[start], params.eps, &mut neighbors);
        if neighbors.len() < params.min_pts {
            state[start] = State::Noise;
            continue;
        }
        let id = members.len() as u32;
        let mut group = vec![start];
        state[start] = State::Member(id);
        queue.extend(neighbors.iter().copied());
        while let Some(q) = queue.pop_front() {
            match state[q] {
                State::Member(_) => continue,
                State::Noise => {
                    // border point; it was already found not to be core
                    state[q] = State::Member(id);
                    group.push(q);
                    continue;
                }
                State::Unvisited => {
                    state[q] = State::Member(id);
                    group.push(q);
                }
            }
            index.radius_query_into(index.coords[q], params.eps, &mut neighbors);
            if neighbors.len() >= params.min_pts {
                queue.extend(neighbors.iter().copied().filter(|&j| !matches!(state[j], State::Member(_))));
            }
        }
        group.sort_unstable();
        members.push(group);
    }

    // A core point whose neighbours were claimed as border points by earlier
    // clusters can leave a group below min_pts; such groups are noise.
    let mut noise_mask: Vec<bool> = state.iter().map(|s| matches!(s, State::Noise)).collect();
    members.retain(|group| {
        let keep = group.len() >= params.min_pts;
        if !keep {
            group.iter().for_each(|&i| noise_mask[i] = true);
        }
        keep
    });

    let clusters = members
        .iter()
        .enumerate()
        .map(|(id, idx)| summarize_cluster(cloud, id as u32, idx))
        .collect::<Result<Vec<_>, _>>()?;
    let noise = noise_mask.iter().enumerate().filter_map(|(i, n)| n.then_some(i)).collect();
    Ok(DbscanResult { clusters, noise })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud_of(pts: &[[f32; 3]]) -> PointCloud {
        PointCloud::new("t", pts.iter().map(|p| Point3::new(p[0], p[1], p[2], 0.0)).collect())
    }

    #[test]
    fn one_point_one_cell() {
        let idx = build_index(&cloud_of(&[[3.0, -2.0, 1.0]]), 0.5).unwrap();
        assert_eq!(idx.occupied_cells(), 1);
    }

    #[test]
    fn floor_arithmetic_shares_cell() {
        let idx = build_index(&cloud_of(&[[0.1, 0.1, 0.1], [0.9, 0.9, 0.9]]), 1.0).unwrap();
        assert_eq!(idx.occupied_cells(), 1);
        assert_eq!(idx.cell_of([-0.1, 0.0, 0.0]), (-1, 0, 0));
    }

    #[test]
    fn zero_cell_rejected() {
        assert!(build_index(&cloud_of(&[[0.0; 3]]), 0.0).is_err());
    }

    #[test]
    fn query_includes_center_and_boundary() {
        let cloud = cloud_of(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]);
        let idx = build_index(&cloud, 0.5).unwrap();
        assert_eq!(idx.radius_query([0.0; 3], 1e-6), vec![0]);
        assert_eq!(idx.radius_query([0.0; 3], 1.0), vec![0, 1]);
        assert_eq!(idx.radius_query([0.0; 3], 100.0), vec![0, 1, 2]);
    }

    #[test]
    fn dense_blob_is_one_cluster() {
        let pts: Vec<[f32; 3]> = (0..20).map(|i| [i as f32 * 0.01, 0.0, 0.0]).collect();
        let r = dbscan(&cloud_of(&pts), &DbscanParams { eps: 0.5, min_pts: 5 }).unwrap();
        assert_eq!(r.clusters.len(), 1);
        assert_eq!(r.clusters[0].point_indices, (0..20).collect::<Vec<_>>());
        assert!(r.noise.is_empty());
    }

    #[test]
    fn isolated_points_are_noise() {
        let cloud = cloud_of(&[[0.0, 0.0, 0.0], [5.0, 0.0, 0.0], [0.0, 5.0, 0.0]]);
        let r = dbscan(&cloud, &DbscanParams { eps: 0.5, min_pts: 5 }).unwrap();
        assert!(r.clusters.is_empty());
        assert_eq!(r.noise, vec![0, 1, 2]);
    }

    #[test]
    fn border_point_goes_to_first_cluster() {
        // two chains (each core) with a shared border point in the middle
        let mut pts = vec![[1.0f32, 0.0, 0.0]];
        pts.extend((0..4).map(|i| [0.0 - i as f32 * 0.1, 0.0, 0.0]));
        pts.extend((0..4).map(|i| [2.0 + i as f32 * 0.1, 0.0, 0.0]));
        let r = dbscan(&cloud_of(&pts), &DbscanParams { eps: 1.0, min_pts: 4 }).unwrap();
        assert_eq!(r.clusters.len(), 2);
        // point 0 is not core (only 3 neighbours incl. itself) and is reached
        // first by the cluster seeded from point 1
        assert!(r.clusters[0].point_indices.contains(&0));
        assert!(!r.clusters[1].point_indices.contains(&0));
    }

    #[test]
    fn summarize_examples() {
        let cloud = cloud_of(&[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
        let one = summarize_cluster(&cloud, 0, &[1]).unwrap();
        assert_eq!(one.extent.size(), [0.0, 0.0, 0.0]);
        assert_eq!(one.centroid, [1.0, 2.0, 3.0]);
        let both = summarize_cluster(&cloud, 0, &[0, 1]).unwrap();
        assert_eq!(both.extent.size(), [1.0, 2.0, 3.0]);
        assert_eq!(both.centroid, [0.5, 1.0, 1.5]);
        assert_eq!(summarize_cluster(&cloud, 0, &[]), Err(ClusterError::EmptyCluster));
    }
}
