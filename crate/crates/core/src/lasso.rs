//! Non-interactive lasso selection on a voxelized surface.
//!
//! The mesh is voxelized conservatively, consecutive keypoint voxels are joined
//! by shortest 26-connected paths into a closed loop, the region on the seed's
//! side of the loop is flood-filled, and the triangles whose centroids land in
//! that region are cut out as a submesh.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{MeshError, TriMesh};

pub const MIN_RESOLUTION: usize = 8;
pub const MAX_RESOLUTION: usize = 1024;

/// Fraction of the surface a flood may cover before the loop is declared leaky.
pub const ESCAPE_FRACTION: f64 = 0.8;

#[derive(Debug, Error)]
pub enum LassoError {
    #[error("resolution {0} outside [8, 1024]")]
    InvalidResolution(usize),
    #[error("mesh bounding box is degenerate (all vertices coincide)")]
    DegenerateMesh,
    #[error("at least 3 keypoints are required, got {0}")]
    TooFewKeypoints(usize),
    #[error("voxel {0} is not occupied")]
    NotOccupied(Voxel),
    #[error("no path between voxels {from} and {to}")]
    NoPath { from: Voxel, to: Voxel },
    #[error("dense loop visits voxel {0} twice")]
    RepeatedVoxel(Voxel),
    #[error("seed voxel {0} lies on the loop")]
    SeedOnLoop(Voxel),
    #[error("loop does not separate the surface: flood reached {reached} of {total} voxels")]
    LoopDoesNotSeparate { reached: usize, total: usize },
    #[error("region is empty")]
    EmptyRegion,
    #[error("no triangle centroid falls inside the region")]
    EmptySelection,
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Integer voxel coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Voxel(pub [i32; 3]);

impl Voxel {
    pub fn new(x: i32, y: i32, z: i32) -> Self {
        Voxel([x, y, z])
    }

    fn offset(self, d: [i32; 3]) -> Voxel {
        Voxel([self.0[0] + d[0], self.0[1] + d[1], self.0[2] + d[2]])
    }

    /// Euclidean length of a single step between 26-neighbors.
    pub fn step_cost(self, other: Voxel) -> f64 {
        let axes = (0..3).filter(|&k| self.0[k] != other.0[k]).count();
        match axes {
            0 => 0.0,
            1 => 1.0,
            2 => std::f64::consts::SQRT_2,
            _ => 3f64.sqrt(),
        }
    }

    pub fn is_26_neighbor(self, other: Voxel) -> bool {
        self != other && (0..3).all(|k| (self.0[k] - other.0[k]).abs() <= 1)
    }
}

impl std::fmt::Display for Voxel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

const FACE_OFFSETS: [[i32; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

fn neighbor_offsets_26() -> impl Iterator<Item = [i32; 3]> {
    (-1..=1).flat_map(|x| (-1..=1).flat_map(move |y| (-1..=1).map(move |z| [x, y, z])))
        .filter(|d| *d != [0, 0, 0])
}

/// Surface voxels of a mesh on a cubic grid.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    resolution: usize,
    origin: Point3<f64>,
    voxel_size: f64,
    occupied: Vec<Voxel>,
    index: HashMap<Voxel, usize>,
}

impl VoxelGrid {
    /// Builds a grid from an explicit occupancy set (used for synthetic surfaces).
    pub fn from_occupancy(
        resolution: usize,
        origin: Point3<f64>,
        voxel_size: f64,
        voxels: impl IntoIterator<Item = Voxel>,
    ) -> Result<Self, LassoError> {
        if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&resolution) {
            return Err(LassoError::InvalidResolution(resolution));
        }
        let set: BTreeSet<Voxel> = voxels.into_iter().collect();
        let r = resolution as i32;
        if let Some(v) = set.iter().find(|v| v.0.iter().any(|&c| c < 0 || c >= r)) {
            return Err(LassoError::NotOccupied(*v));
        }
        let occupied: Vec<Voxel> = set.into_iter().collect();
        let index = occupied.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        Ok(Self { resolution, origin, voxel_size, occupied, index })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn origin(&self) -> Point3<f64> {
        self.origin
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    /// Occupied voxels in ascending order.
    pub fn occupied(&self) -> &[Voxel] {
        &self.occupied
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    pub fn is_occupied(&self, v: Voxel) -> bool {
        self.index.contains_key(&v)
    }

    /// Voxel containing `p` under half-open cells, or `None` outside the grid.
    pub fn voxel_of(&self, p: &Point3<f64>) -> Option<Voxel> {
        let mut c = [0i32; 3];
        for k in 0..3 {
            let f = ((p[k] - self.origin[k]) / self.voxel_size).floor();
            if !(0.0..self.resolution as f64).contains(&f) {
                return None;
            }
            c[k] = f as i32;
        }
        Some(Voxel(c))
    }

    pub fn voxel_min_corner(&self, v: Voxel) -> Point3<f64> {
        self.origin + Vector3::new(v.0[0] as f64, v.0[1] as f64, v.0[2] as f64) * self.voxel_size
    }

    pub fn voxel_center(&self, v: Voxel) -> Point3<f64> {
        self.voxel_min_corner(v) + Vector3::repeat(0.5 * self.voxel_size)
    }

    /// Occupied voxel nearest to a model-space point (ties to the smallest voxel).
    pub fn nearest_occupied(&self, p: &Point3<f64>) -> Option<Voxel> {
        self.occupied
            .iter()
            .map(|&v| ((self.voxel_center(v) - p).norm_squared(), v))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, v)| v)
    }
}

/// Closed loop of occupied voxels with the cost of each keypoint-to-keypoint segment.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelLoop {
    pub voxels: Vec<Voxel>,
    pub segment_costs: Vec<f64>,
}

impl VoxelLoop {
    /// Sum of step costs along the loop, including the closing step.
    pub fn length(&self) -> f64 {
        let n = self.voxels.len();
        (0..n).map(|i| self.voxels[i].step_cost(self.voxels[(i + 1) % n])).sum()
    }
}

/// Conservative triangle/box overlap by the separating axis theorem.
///
/// Touching counts as overlap, and the box is grown by `slack` on every side so
/// that rounding never drops a touching voxel.
pub fn triangle_box_overlap(
    tri: &[Point3<f64>; 3],
    center: &Point3<f64>,
    half: f64,
    slack: f64,
) -> bool {
    let e = half + slack;
    let v = [tri[0] - center, tri[1] - center, tri[2] - center];
    let separated = |axis: Vector3<f64>| {
        let p = [axis.dot(&v[0]), axis.dot(&v[1]), axis.dot(&v[2])];
        let r = e * (axis.x.abs() + axis.y.abs() + axis.z.abs());
        let lo = p[0].min(p[1]).min(p[2]);
        let hi = p[0].max(p[1]).max(p[2]);
        lo > r || hi < -r
    };
    let edges = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    let units = [Vector3::x(), Vector3::y(), Vector3::z()];
    if units.iter().any(|u| separated(*u)) {
        return false;
    }
    if separated(edges[0].cross(&edges[1])) {
        return false;
    }
    for u in &units {
        for f in &edges {
            if separated(u.cross(f)) {
                return false;
            }
        }
    }
    true
}

/// Conservative surface voxelization.
///
/// The voxel size is the largest bounding-box extent divided by
/// `resolution - 2`, and the grid origin sits one voxel below the bounding-box
/// minimum, which leaves a one-voxel margin on the low side of every axis.
pub fn voxelize_surface(mesh: &TriMesh, resolution: usize) -> Result<VoxelGrid, LassoError> {
    if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&resolution) {
        return Err(LassoError::InvalidResolution(resolution));
    }
    let bb = mesh.bounding_box();
    let extent = bb.extent().max();
    if !(extent > 0.0) {
        return Err(LassoError::DegenerateMesh);
    }
    let h = extent / (resolution - 2) as f64;
    let origin = bb.min - Vector3::repeat(h);
    let slack = 1e-9 * h;
    let r = resolution as i32;

    let cell = |x: f64, k: usize| ((x - origin[k]) / h).floor() as i32;
    let voxels: Vec<Voxel> = (0..mesh.triangle_count())
        .into_par_iter()
        .flat_map_iter(|t| {
            let tri = mesh.triangle_points(t);
            let mut lo = [0i32; 3];
            let mut hi = [0i32; 3];
            for k in 0..3 {
                let mn = tri.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
                let mx = tri.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
                lo[k] = (cell(mn, k) - 1).max(0);
                hi[k] = (cell(mx, k) + 1).min(r - 1);
            }
            let mut hits = Vec::new();
            for x in lo[0]..=hi[0] {
                for y in lo[1]..=hi[1] {
                    for z in lo[2]..=hi[2] {
                        let center = origin + Vector3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * h;
                        if triangle_box_overlap(&tri, &center, 0.5 * h, slack) {
                            hits.push(Voxel([x, y, z]));
                        }
                    }
                }
            }
            hits
        })
        .collect();
    VoxelGrid::from_occupancy(resolution, origin, h, voxels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct QueueEntry {
    cost: f64,
    node: usize,
}

impl Eq for QueueEntry {}

impl Ord for QueueEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (cost, node)
        other.cost.total_cmp(&self.cost).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra shortest path over occupied voxels with 26-connectivity and step
/// weights 1, sqrt 2, sqrt 3. Returns the voxels from `from` to `to`
/// inclusive and the path cost.
pub fn shortest_path(grid: &VoxelGrid, from: Voxel, to: Voxel) -> Result<(Vec<Voxel>, f64), LassoError> {
    let src = *grid.index.get(&from).ok_or(LassoError::NotOccupied(from))?;
    let dst = *grid.index.get(&to).ok_or(LassoError::NotOccupied(to))?;
    let n = grid.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(QueueEntry { cost: 0.0, node: src });
    while let Some(QueueEntry { cost, node }) = heap.pop() {
        if cost > dist[node] {
            continue;
        }
        if node == dst {
            break;
        }
        let v = grid.occupied[node];
        for d in neighbor_offsets_26() {
            let w = v.offset(d);
            if let Some(&m) = grid.index.get(&w) {
                let c = cost + v.step_cost(w);
                if c < dist[m] {
                    dist[m] = c;
                    prev[m] = node;
                    heap.push(QueueEntry { cost: c, node: m });
                }
            }
        }
    }
    if !dist[dst].is_finite() {
        return Err(LassoError::NoPath { from, to });
    }
    let mut path = vec![grid.occupied[dst]];
    let mut cur = dst;
    while cur != src {
        cur = prev[cur];
        path.push(grid.occupied[cur]);
    }
    path.reverse();
    Ok((path, dist[dst]))
}

/// Joins consecutive keypoints (and the last back to the first) with shortest
/// paths. Junction voxels appear once; a loop that crosses itself is rejected.
pub fn dense_loop(grid: &VoxelGrid, keypoints: &[Voxel]) -> Result<VoxelLoop, LassoError> {
    if keypoints.len() < 3 {
        return Err(LassoError::TooFewKeypoints(keypoints.len()));
    }
    if let Some(k) = keypoints.iter().find(|k| !grid.is_occupied(**k)) {
        return Err(LassoError::NotOccupied(*k));
    }
    let mut voxels = Vec::new();
    let mut segment_costs = Vec::with_capacity(keypoints.len());
    for i in 0..keypoints.len() {
        let (a, b) = (keypoints[i], keypoints[(i + 1) % keypoints.len()]);
        let (path, cost) = shortest_path(grid, a, b)?;
        voxels.extend_from_slice(&path[..path.len() - 1]);
        segment_costs.push(cost);
    }
    let mut seen = BTreeSet::new();
    for v in &voxels {
        if !seen.insert(*v) {
            return Err(LassoError::RepeatedVoxel(*v));
        }
    }
    Ok(VoxelLoop { voxels, segment_costs })
}

/// Region on the seed's side of the loop.
///
/// Loop voxels are first dilated by `dilation` rings (26-neighborhood, within
/// the occupancy) into a barrier, so that a one-voxel loop also cuts surfaces
/// that voxelize more than one voxel thick. The flood runs with 6-connectivity
/// over the remaining voxels; 26-connected floods would slip through the
/// diagonal steps of the loop. Afterwards each non-loop barrier voxel joins
/// the region when the flood reaches it (through barrier voxels) no later than
/// the rest of the surface does, and the loop itself is added.
pub fn flood_select(
    grid: &VoxelGrid,
    lasso: &VoxelLoop,
    seed: Voxel,
    dilation: usize,
) -> Result<BTreeSet<Voxel>, LassoError> {
    let seed_idx = *grid.index.get(&seed).ok_or(LassoError::NotOccupied(seed))?;
    let n = grid.len();
    let mut on_loop = vec![false; n];
    for v in &lasso.voxels {
        let i = *grid.index.get(v).ok_or(LassoError::NotOccupied(*v))?;
        on_loop[i] = true;
    }
    if on_loop[seed_idx] {
        return Err(LassoError::SeedOnLoop(seed));
    }
    let mut barrier = on_loop.clone();
    let mut frontier: Vec<usize> = (0..n).filter(|&i| on_loop[i]).collect();
    for _ in 0..dilation {
        let mut next = Vec::new();
        for &i in &frontier {
            for d in neighbor_offsets_26() {
                if let Some(&m) = grid.index.get(&grid.occupied[i].offset(d)) {
                    if !barrier[m] {
                        barrier[m] = true;
                        next.push(m);
                    }
                }
            }
        }
        frontier = next;
    }
    if barrier[seed_idx] {
        return Err(LassoError::SeedOnLoop(seed));
    }

    let mut in_region = vec![false; n];
    in_region[seed_idx] = true;
    let mut queue = VecDeque::from([seed_idx]);
    let mut reached = 1usize;
    while let Some(i) = queue.pop_front() {
        for d in FACE_OFFSETS {
            if let Some(&m) = grid.index.get(&grid.occupied[i].offset(d)) {
                if !barrier[m] && !in_region[m] {
                    in_region[m] = true;
                    reached += 1;
                    queue.push_back(m);
                }
            }
        }
    }
    if reached as f64 > ESCAPE_FRACTION * n as f64 {
        return Err(LassoError::LoopDoesNotSeparate { reached, total: n });
    }

    if dilation > 0 {
        // barrier voxels go to whichever side reaches them first; ties go to both
        let from_region = barrier_distances(grid, &barrier, &on_loop, |i| in_region[i]);
        let from_other = barrier_distances(grid, &barrier, &on_loop, |i| !barrier[i] && !in_region[i]);
        for i in 0..n {
            if barrier[i] && !on_loop[i] && from_region[i] <= from_other[i] && from_region[i] != usize::MAX {
                in_region[i] = true;
            }
        }
    }
    Ok((0..n)
        .filter(|&i| in_region[i] || on_loop[i])
        .map(|i| grid.occupied[i])
        .collect())
}

/// Face-connected hop counts from `source` voxels into the non-loop barrier.
fn barrier_distances(
    grid: &VoxelGrid,
    barrier: &[bool],
    on_loop: &[bool],
    source: impl Fn(usize) -> bool,
) -> Vec<usize> {
    let n = grid.len();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for i in 0..n {
        if source(i) {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for d in FACE_OFFSETS {
            if let Some(&m) = grid.index.get(&grid.occupied[i].offset(d)) {
                if barrier[m] && !on_loop[m] && dist[m] == usize::MAX {
                    dist[m] = dist[i] + 1;
                    queue.push_back(m);
                }
            }
        }
    }
    dist
}

/// Triangles whose centroids fall in a region voxel, compactly reindexed.
pub fn extract_part(mesh: &TriMesh, region: &BTreeSet<Voxel>, grid: &VoxelGrid) -> Result<TriMesh, LassoError> {
    if region.is_empty() {
        return Err(LassoError::EmptyRegion);
    }
    let selected: Vec<usize> = (0..mesh.triangle_count())
        .filter(|&t| {
            grid.voxel_of(&mesh.triangle_centroid(t))
                .is_some_and(|v| region.contains(&v))
        })
        .collect();
    if selected.is_empty() {
        return Err(LassoError::EmptySelection);
    }
    Ok(mesh.submesh(&selected)?)
}
