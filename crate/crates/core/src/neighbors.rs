//! Deterministic spatial kernels: farthest point sampling, capped radius
//! grouping and k-nearest neighbors.
//!
//! Every kernel has a brute-force twin in [`reference`]. The accelerated paths
//! evaluate the same squared-distance expression in the same order, so their
//! output is bit-identical to the reference, ties included.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NeighborError {
    #[error("EmptyCloud: spatial query on a cloud with no points")]
    EmptyCloud,
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
}

#[inline]
pub fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Per-query index lists stored contiguously.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NeighborLists {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl NeighborLists {
    pub fn from_lists<I: IntoIterator<Item = Vec<usize>>>(lists: I) -> Self {
        let mut out = Self {
            offsets: vec![0],
            indices: Vec::new(),
        };
        for l in lists {
            out.push(&l);
        }
        out
    }

    fn with_capacity(queries: usize, per_query: usize) -> Self {
        let mut offsets = Vec::with_capacity(queries + 1);
        offsets.push(0);
        Self {
            offsets,
            indices: Vec::with_capacity(queries * per_query),
        }
    }

    fn push(&mut self, list: &[usize]) {
        self.indices.extend_from_slice(list);
        self.offsets.push(self.indices.len());
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, q: usize) -> &[usize] {
        &self.indices[self.offsets[q]..self.offsets[q + 1]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.len()).map(move |q| self.get(q))
    }
}

/// Start point for FPS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FpsStart {
    #[default]
    First,
    Index(usize),
    /// The point closest to the cloud's mean, lowest index on ties. Makes the
    /// selection independent of input order for clouds with unique coordinates.
    Canonical,
}

impl FpsStart {
    pub fn resolve(self, points: &[[f64; 3]]) -> usize {
        match self {
            FpsStart::First => 0,
            FpsStart::Index(i) => i,
            FpsStart::Canonical => canonical_start(points),
        }
    }
}

pub fn canonical_start(points: &[[f64; 3]]) -> usize {
    if points.is_empty() {
        return 0;
    }
    // Sum in a canonical (sorted) order so the mean does not depend on point order.
    let mut sorted: Vec<[f64; 3]> = points.to_vec();
    sorted.sort_by(|a, b| {
        a[0].total_cmp(&b[0])
            .then(a[1].total_cmp(&b[1]))
            .then(a[2].total_cmp(&b[2]))
    });
    let mut mean = [0.0; 3];
    for p in &sorted {
        for a in 0..3 {
            mean[a] += p[a];
        }
    }
    let n = points.len() as f64;
    let mean = [mean[0] / n, mean[1] / n, mean[2] / n];
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, &mean);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn cycle_to(mut out: Vec<usize>, len: usize) -> Vec<usize> {
    let base = out.len();
    for k in base..len {
        out.push(out[k % base]);
    }
    out
}

/// Greedy max-min selection of `n_fps` indices beginning at `start`.
///
/// Distance ties go to the smallest index. When `n_fps > n` all `n` indices
/// are selected first and the sequence then repeats cyclically.
pub fn farthest_point_sampling(
    points: &[[f64; 3]],
    n_fps: usize,
    start: usize,
) -> Result<Vec<usize>, NeighborError> {
    let n = points.len();
    if n == 0 {
        return Err(NeighborError::EmptyCloud);
    }
    if n_fps == 0 || start >= n {
        return Err(NeighborError::InvalidArgument(format!(
            "n_fps = {n_fps}, start = {start} for {n} points"
        )));
    }
    let m = n_fps.min(n);
    let mut out = Vec::with_capacity(n_fps);
    // Selected points are marked with -1 so they never win again.
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut current = start;
    out.push(current);
    min_d2[current] = -1.0;
    while out.len() < m {
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, (p, md)) in points.iter().zip(min_d2.iter_mut()).enumerate() {
            if *md < 0.0 {
                continue;
            }
            let d = dist2(p, &c);
            if d < *md {
                *md = d;
            }
            if *md > best_d {
                best_d = *md;
                best = i;
            }
        }
        current = best;
        min_d2[current] = -1.0;
        out.push(current);
    }
    Ok(cycle_to(out, n_fps))
}

/// Uniform voxel grid over a point set, points bucketed in ascending index order.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    origin: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    items: Vec<usize>,
}

/// Upper bound on grid cells relative to the point count.
const MAX_CELLS_PER_POINT: usize = 8;

impl VoxelGrid {
    /// Builds a grid with the requested cell edge, enlarging it if the grid
    /// would otherwise exceed a memory bound.
    pub fn build(points: &[[f64; 3]], cell: f64) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if points.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let mut cell = if cell.is_finite() && cell > 0.0 {
            cell
        } else {
            1.0
        };
        let max_cells = (points.len().max(1) * MAX_CELLS_PER_POINT).max(64);
        let dims = loop {
            let d =
                [0, 1, 2].map(|a| (((hi[a] - lo[a]) / cell).floor() as usize).saturating_add(1));
            let total = d[0].saturating_mul(d[1]).saturating_mul(d[2]);
            if total <= max_cells {
                break d;
            }
            cell *= 2.0;
        };
        let mut grid = Self {
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            items: Vec::new(),
        };
        let total = dims[0] * dims[1] * dims[2];
        let keys: Vec<usize> = points.iter().map(|p| grid.flat(grid.cell_of(p))).collect();
        let mut counts = vec![0usize; total + 1];
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            items[fill[k]] = i;
            fill[k] += 1;
        }
        grid.starts = counts;
        grid.items = items;
        grid
    }

    /// Grid sized for roughly `per_cell` points per occupied cell.
    pub fn for_density(points: &[[f64; 3]], per_cell: usize) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let ext = [0, 1, 2].map(|a| (hi[a] - lo[a]).max(0.0));
        let max_ext = ext.iter().cloned().fold(0.0, f64::max);
        if !(max_ext > 0.0) {
            return Self::build(points, 1.0);
        }
        let floor = max_ext * 1e-3;
        let vol: f64 = ext.iter().map(|e| e.max(floor)).product();
        let cells = (points.len() as f64 / per_cell.max(1) as f64).max(1.0);
        Self::build(points, (vol / cells).cbrt())
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    fn cell_of(&self, p: &[f64; 3]) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let c = ((p[a] - self.origin[a]) / self.cell).floor();
            if c <= 0.0 {
                0
            } else {
                (c as usize).min(self.dims[a] - 1)
            }
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn bucket(&self, c: [usize; 3]) -> &[usize] {
        let k = self.flat(c);
        &self.items[self.starts[k]..self.starts[k + 1]]
    }

    /// Calls `f` for every point in cells within `reach` cells of `q`'s cell.
    fn for_each_near(&self, q: &[f64; 3], reach: usize, mut f: impl FnMut(usize)) {
        let c = self.cell_of(q);
        let lo = c.map(|v| v.saturating_sub(reach));
        let hi = [0, 1, 2].map(|a| (c[a] + reach).min(self.dims[a] - 1));
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    for &i in self.bucket([x, y, z]) {
                        f(i);
                    }
                }
            }
        }
    }
}

/// Up to `n_n` indices within distance `r` of each centroid, keeping the
/// smallest qualifying indices. A centroid with no qualifier gets its own index.
///
/// `centroids` are indices into `points`.
pub fn radius_group(
    points: &[[f64; 3]],
    centroids: &[usize],
    r: f64,
    n_n: usize,
) -> Result<NeighborLists, NeighborError> {
    check_radius_args(points, centroids, r, n_n)?;
    let grid = VoxelGrid::build(points, r);
    radius_group_with(&grid, points, centroids, r, n_n)
}

/// [`radius_group`] over a prebuilt grid.
pub fn radius_group_with(
    grid: &VoxelGrid,
    points: &[[f64; 3]],
    centroids: &[usize],
    r: f64,
    n_n: usize,
) -> Result<NeighborLists, NeighborError> {
    check_radius_args(points, centroids, r, n_n)?;
    let r2 = r * r;
    let reach = (r / grid.cell_size()).ceil() as usize;
    let mut out = NeighborLists::with_capacity(centroids.len(), n_n);
    let mut found = Vec::new();
    for &c in centroids {
        let cp = points[c];
        found.clear();
        grid.for_each_near(&cp, reach, |i| {
            if dist2(&points[i], &cp) <= r2 {
                found.push(i);
            }
        });
        if found.is_empty() {
            out.push(&[c]);
            continue;
        }
        if found.len() > n_n {
            found.select_nth_unstable(n_n);
            found.truncate(n_n);
        }
        found.sort_unstable();
        out.push(&found);
    }
    Ok(out)
}

fn check_radius_args(
    points: &[[f64; 3]],
    centroids: &[usize],
    r: f64,
    n_n: usize,
) -> Result<(), NeighborError> {
    if !(r > 0.0) || n_n == 0 {
        return Err(NeighborError::InvalidArgument(format!(
            "radius grouping needs r > 0 and n_n >= 1 (r = {r}, n_n = {n_n})"
        )));
    }
    if let Some(&c) = centroids.iter().find(|&&c| c >= points.len()) {
        return Err(NeighborError::InvalidArgument(format!(
            "centroid index {c} out of range for {} points",
            points.len()
        )));
    }
    Ok(())
}

/// The `k` nearest points to each query, ties to the smaller index. For
/// `k > n` the sorted list of all points repeats cyclically.
pub fn knn(
    queries: &[[f64; 3]],
    points: &[[f64; 3]],
    k: usize,
) -> Result<NeighborLists, NeighborError> {
    if points.is_empty() {
        return Err(NeighborError::EmptyCloud);
    }
    if k == 0 {
        return Err(NeighborError::InvalidArgument("k must be >= 1".into()));
    }
    if k >= points.len() {
        return reference::knn(queries, points, k);
    }
    let grid = VoxelGrid::for_density(points, k.max(4));
    Ok(knn_with(&grid, queries, points, k))
}

fn cmp_candidate(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Ring search over a prebuilt grid; requires `k < points.len()`.
fn knn_with(
    grid: &VoxelGrid,
    queries: &[[f64; 3]],
    points: &[[f64; 3]],
    k: usize,
) -> NeighborLists {
    let mut out = NeighborLists::with_capacity(queries.len(), k);
    let mut cand: Vec<(f64, usize)> = Vec::new();
    let max_ring = grid.dims.iter().copied().max().unwrap_or(1);
    for q in queries {
        cand.clear();
        let c = grid.cell_of(q);
        let mut ring = 0usize;
        loop {
            visit_ring(grid, c, ring, |i| cand.push((dist2(&points[i], q), i)));
            // Distance from q to the nearest face of the searched box that still
            // has grid cells behind it.
            let mut bound = f64::INFINITY;
            for a in 0..3 {
                if c[a] >= ring + 1 {
                    let lo = grid.origin[a] + (c[a] - ring) as f64 * grid.cell;
                    bound = bound.min(q[a] - lo);
                }
                if c[a] + ring + 1 < grid.dims[a] {
                    let hi = grid.origin[a] + (c[a] + ring + 1) as f64 * grid.cell;
                    bound = bound.min(hi - q[a]);
                }
            }
            if bound == f64::INFINITY || ring > max_ring {
                break;
            }
            if cand.len() >= k {
                cand.select_nth_unstable_by(k - 1, cmp_candidate);
                let kth = cand[k - 1].0;
                let b = bound.max(0.0);
                if kth < b * b * (1.0 - 1e-9) {
                    break;
                }
            }
            ring += 1;
        }
        cand.sort_unstable_by(cmp_candidate);
        let list: Vec<usize> = cand.iter().take(k).map(|c| c.1).collect();
        out.push(&list);
    }
    out
}

fn visit_ring(grid: &VoxelGrid, c: [usize; 3], ring: usize, mut f: impl FnMut(usize)) {
    let r = ring as isize;
    let ci = c.map(|v| v as isize);
    let dims = grid.dims.map(|v| v as isize);
    for dz in -r..=r {
        let z = ci[2] + dz;
        if z < 0 || z >= dims[2] {
            continue;
        }
        for dy in -r..=r {
            let y = ci[1] + dy;
            if y < 0 || y >= dims[1] {
                continue;
            }
            let on_shell = dz.abs() == r || dy.abs() == r;
            let step = if on_shell { 1 } else { (2 * r).max(1) };
            let mut dx = -r;
            while dx <= r {
                let x = ci[0] + dx;
                if x >= 0 && x < dims[0] {
                    for &i in grid.bucket([x as usize, y as usize, z as usize]) {
                        f(i);
                    }
                }
                dx += step;
            }
        }
    }
}

/// O(n²) reference implementations, the oracles for the accelerated kernels.
pub mod reference {
    use super::*;

    /// Recomputes every candidate's distance to the whole selected set at each step.
    pub fn farthest_point_sampling(
        points: &[[f64; 3]],
        n_fps: usize,
        start: usize,
    ) -> Result<Vec<usize>, NeighborError> {
        let n = points.len();
        if n == 0 {
            return Err(NeighborError::EmptyCloud);
        }
        if n_fps == 0 || start >= n {
            return Err(NeighborError::InvalidArgument("bad n_fps/start".into()));
        }
        let mut selected = vec![start];
        let mut taken = vec![false; n];
        taken[start] = true;
        while selected.len() < n_fps.min(n) {
            let mut best = None;
            let mut best_d = f64::NEG_INFINITY;
            for i in 0..n {
                if taken[i] {
                    continue;
                }
                let d = selected
                    .iter()
                    .map(|&s| dist2(&points[i], &points[s]))
                    .fold(f64::INFINITY, f64::min);
                if d > best_d {
                    best_d = d;
                    best = Some(i);
                }
            }
            let b = best.expect("unselected point exists");
            taken[b] = true;
            selected.push(b);
        }
        let base = selected.len();
        for k in base..n_fps {
            selected.push(selected[k % base]);
        }
        Ok(selected)
    }

    /// Scans every point for every centroid.
    pub fn radius_group(
        points: &[[f64; 3]],
        centroids: &[usize],
        r: f64,
        n_n: usize,
    ) -> Result<NeighborLists, NeighborError> {
        check_radius_args(points, centroids, r, n_n)?;
        let r2 = r * r;
        let lists = centroids.iter().map(|&c| {
            let qualifiers: Vec<usize> = (0..points.len())
                .filter(|&i| dist2(&points[i], &points[c]) <= r2)
                .collect();
            if qualifiers.is_empty() {
                vec![c]
            } else {
                qualifiers.into_iter().take(n_n).collect()
            }
        });
        Ok(NeighborLists::from_lists(lists))
    }

    /// Full sort of all distances per query.
    pub fn knn(
        queries: &[[f64; 3]],
        points: &[[f64; 3]],
        k: usize,
    ) -> Result<NeighborLists, NeighborError> {
        if points.is_empty() {
            return Err(NeighborError::EmptyCloud);
        }
        if k == 0 {
            return Err(NeighborError::InvalidArgument("k must be >= 1".into()));
        }
        let lists = queries.iter().map(|q| {
            let mut all: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .map(|(i, p)| (dist2(p, q), i))
                .collect();
            all.sort_by(cmp_candidate);
            let sorted: Vec<usize> = all.into_iter().map(|c| c.1).collect();
            (0..k).map(|j| sorted[j % sorted.len()]).collect()
        });
        Ok(NeighborLists::from_lists(lists))
    }
}
