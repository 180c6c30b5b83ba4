//! Brute-force reference implementations used to check the library.
//!
//! Each oracle is written from the definition of the quantity it computes and
//! shares no code path with the crate (beyond plain data types).

#![allow(dead_code)]

use lidarprop::proposals::BBox2D;

pub fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

/// All indices within `radius` of `center`, by linear scan.
pub fn linear_scan(points: &[[f64; 3]], center: [f64; 3], radius: f64) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| dist2(points[i], center) <= radius * radius)
        .collect()
}

/// DBSCAN from its graph definition.
///
/// Core points are those with at least `min_pts` points (self included)
/// within `eps`. Clusters are the connected components of the core graph,
/// numbered by their smallest core index. A border point joins the
/// lowest-numbered cluster among its core neighbours. Clusters left with
/// fewer than `min_pts` members become noise. Returns a cluster id
/// (or `None` for noise) per point.
pub fn naive_dbscan(points: &[[f64; 3]], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let adj: Vec<Vec<usize>> = (0..n).map(|i| linear_scan(points, points[i], eps)).collect();
    let core: Vec<bool> = adj.iter().map(|a| a.len() >= min_pts).collect();

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        if !core[i] {
            continue;
        }
        for &j in &adj[i] {
            if core[j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    // component id ordered by smallest core index
    let mut comp_id = vec![None; n];
    let mut next = 0;
    let mut label = vec![None; n];
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            if comp_id[r].is_none() {
                comp_id[r] = Some(next);
                next += 1;
            }
            label[i] = comp_id[r];
        }
    }
    for i in 0..n {
        if !core[i] {
            label[i] = adj[i].iter().filter(|&&j| core[j]).filter_map(|&j| label[j]).min();
        }
    }
    // groups under min_pts are noise; survivors renumbered in order
    let mut size = vec![0usize; next];
    label.iter().flatten().for_each(|&c| size[c] += 1);
    let mut renumber = vec![None; next];
    let mut k = 0;
    for c in 0..next {
        if size[c] >= min_pts {
            renumber[c] = Some(k);
            k += 1;
        }
    }
    label.iter().map(|l| l.and_then(|c| renumber[c])).collect()
}

/// Solves the 6×6 normal equations of the quadratic surface in raw
/// coordinates by Gaussian elimination with partial pivoting.
pub fn normal_equations_fit(points: &[[f64; 3]]) -> [f64; 6] {
    let mut m = [[0.0f64; 7]; 6];
    for p in points {
        let (x, y) = (p[0], p[1]);
        let row = [1.0, x, y, x * x, x * y, y * y];
        for i in 0..6 {
            for j in 0..6 {
                m[i][j] += row[i] * row[j];
            }
            m[i][6] += row[i] * p[2];
        }
    }
    for col in 0..6 {
        let piv = (col..6).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, piv);
        for r in 0..6 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..7 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut out = [0.0; 6];
    for i in 0..6 {
        out[i] = m[i][6] / m[i][i];
    }
    out
}

/// IoU of integer boxes by counting unit pixels.
pub fn raster_iou(a: [i32; 4], b: [i32; 4]) -> f64 {
    let lo_x = a[0].min(b[0]);
    let hi_x = a[2].max(b[2]);
    let lo_y = a[1].min(b[1]);
    let hi_y = a[3].max(b[3]);
    let inside = |r: [i32; 4], x: i32, y: i32| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
    let (mut inter, mut union) = (0u64, 0u64);
    for x in lo_x..hi_x {
        for y in lo_y..hi_y {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Pixel-free IoU used inside the matching oracle.
pub fn box_iou(a: &BBox2D, b: &BBox2D) -> f64 {
    let iw = (a.right.min(b.right) - a.left.max(b.left)).max(0.0);
    let ih = (a.bottom.min(b.bottom) - a.top.max(b.top)).max(0.0);
    let inter = iw * ih;
    let ua = (a.right - a.left) * (a.bottom - a.top) + (b.right - b.left) * (b.bottom - b.top) - inter;
    if inter == 0.0 {
        0.0
    } else {
        inter / ua
    }
}

/// (TP, FP, FN) from exhaustive search over injective proposal → label
/// assignments. Proposals are visited in `order`; the chosen assignment is
/// the lexicographic maximum of the per-proposal IoU sequence in that order
/// (unmatched counts as -1), which is what a greedy claim order produces.
/// Unmatched proposals overlapping an ignore region by more than the
/// threshold are not counted.
pub fn exhaustive_match(
    proposals: &[BBox2D],
    order: &[usize],
    labels: &[BBox2D],
    ignore: &[BBox2D],
    threshold: f64,
) -> (usize, usize, usize) {
    fn search(
        k: usize,
        order: &[usize],
        proposals: &[BBox2D],
        labels: &[BBox2D],
        threshold: f64,
        used: &mut Vec<bool>,
        current: &mut Vec<Option<usize>>,
        best: &mut Option<(Vec<f64>, Vec<Option<usize>>)>,
    ) {
        if k == order.len() {
            let key: Vec<f64> = order
                .iter()
                .map(|&p| current[p].map_or(-1.0, |l| box_iou(&proposals[p], &labels[l])))
                .collect();
            let better = match best {
                None => true,
                Some((bk, _)) => key.iter().zip(bk.iter()).find(|(a, b)| a != b).is_some_and(|(a, b)| a > b),
            };
            if better {
                *best = Some((key, current.clone()));
            }
            return;
        }
        let p = order[k];
        search(k + 1, order, proposals, labels, threshold, used, current, best);
        for l in 0..labels.len() {
            if !used[l] && box_iou(&proposals[p], &labels[l]) > threshold {
                used[l] = true;
                current[p] = Some(l);
                search(k + 1, order, proposals, labels, threshold, used, current, best);
                current[p] = None;
                used[l] = false;
            }
        }
    }
    let mut best = None;
    search(
        0,
        order,
        proposals,
        labels,
        threshold,
        &mut vec![false; labels.len()],
        &mut vec![None; proposals.len()],
        &mut best,
    );
    let assignment = best.unwrap().1;
    let tp = assignment.iter().filter(|a| a.is_some()).count();
    let fp = (0..proposals.len())
        .filter(|&p| assignment[p].is_none() && !ignore.iter().any(|r| box_iou(&proposals[p], r) > threshold))
        .count();
    (tp, fp, labels.len() - tp)
}

/// Row-major 4×4 product.
pub fn mat4_mul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Pixel of a velodyne point through the homogeneous chain P · R · T, each
/// matrix padded to 4×4. `None` when the camera-frame depth is not positive.
pub fn chain_project(p: [[f64; 4]; 3], r: [[f64; 3]; 3], t: [[f64; 4]; 3], x: [f64; 3]) -> Option<(f64, f64, f64)> {
    let mut p4 = [[0.0; 4]; 4];
    let mut r4 = [[0.0; 4]; 4];
    let mut t4 = [[0.0; 4]; 4];
    for i in 0..3 {
        p4[i] = p[i];
        t4[i] = t[i];
        for j in 0..3 {
            r4[i][j] = r[i][j];
        }
    }
    p4[3][3] = 1.0;
    r4[3][3] = 1.0;
    t4[3][3] = 1.0;
    let rt = mat4_mul(&r4, &t4);
    let v = [x[0], x[1], x[2], 1.0];
    let depth: f64 = (0..4).map(|k| rt[2][k] * v[k]).sum();
    if depth <= 0.0 {
        return None;
    }
    let full = mat4_mul(&p4, &rt);
    let h: Vec<f64> = (0..3).map(|i| (0..4).map(|k| full[i][k] * v[k]).sum()).collect();
    Some((h[0] / h[2], h[1] / h[2], depth))
}
