//! Triangle mesh data model, file I/O, topology queries, surface sampling
//! and Laplacian smoothing.
//!
//! [`TriMesh`] is immutable after construction: every operation that changes
//! geometry returns a new mesh with the same topology.

mod io;
mod sampling;
mod smoothing;
mod topology;

pub use io::{load_mesh, load_points, save_mesh, save_points, MeshFormat};
pub use sampling::{sample_surface, OrientedPointSet, SampleStats};
pub use smoothing::laplacian_smooth;
pub use topology::{boundary_loops, select_near_boundary, BoundaryLoop};

use nalgebra::{Point2, Point3, Vector3};
use std::collections::BTreeSet;
use thiserror::Error;

use crate::spatial::Aabb;

/// Tolerance on the length of stored vertex normals.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// Errors produced while building, reading or querying meshes.
#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh has no triangles")]
    Empty,
    #[error("triangle {triangle} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: usize,
        count: usize,
    },
    #[error("triangle {triangle} repeats vertex {index}")]
    DegenerateTriangle { triangle: usize, index: usize },
    #[error("vertex {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("{attribute} has {got} entries, expected {expected}")]
    AttributeLength {
        attribute: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("normal {0} does not have unit length")]
    NonUnitNormal(usize),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
    #[error("mesh has zero total area")]
    ZeroArea,
    #[error("vertex index {0} is out of range")]
    InvalidVertex(usize),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("point and normal arrays differ in length ({points} vs {normals})")]
    PointNormalMismatch { points: usize, normals: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Indexed triangle mesh with optional per-vertex UVs and normals.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[usize; 3]>,
    uvs: Option<Vec<Point2<f64>>>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::Empty);
        }
        if let Some(i) = vertices.iter().position(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(MeshError::NonFinite(i));
        }
        let count = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &index in tri {
                if index >= count {
                    return Err(MeshError::IndexOutOfRange {
                        triangle: t,
                        index,
                        count,
                    });
                }
            }
            if tri[0] == tri[1] || tri[0] == tri[2] {
                return Err(MeshError::DegenerateTriangle {
                    triangle: t,
                    index: tri[0],
                });
            }
            if tri[1] == tri[2] {
                return Err(MeshError::DegenerateTriangle {
                    triangle: t,
                    index: tri[1],
                });
            }
        }
        Ok(Self {
            vertices,
            triangles,
            uvs: None,
            normals: None,
        })
    }

    pub fn with_uvs(mut self, uvs: Vec<Point2<f64>>) -> Result<Self, MeshError> {
        if uvs.len() != self.vertices.len() {
            return Err(MeshError::AttributeLength {
                attribute: "uvs",
                got: uvs.len(),
                expected: self.vertices.len(),
            });
        }
        self.uvs = Some(uvs);
        Ok(self)
    }

    pub fn with_normals(mut self, normals: Vec<Vector3<f64>>) -> Result<Self, MeshError> {
        if normals.len() != self.vertices.len() {
            return Err(MeshError::AttributeLength {
                attribute: "normals",
                got: normals.len(),
                expected: self.vertices.len(),
            });
        }
        if let Some(i) = normals
            .iter()
            .position(|n| (n.norm() - 1.0).abs() > NORMAL_TOLERANCE)
        {
            return Err(MeshError::NonUnitNormal(i));
        }
        self.normals = Some(normals);
        Ok(self)
    }

    /// Same topology and attributes with new vertex positions.
    pub fn with_positions(&self, positions: Vec<Point3<f64>>) -> Result<Self, MeshError> {
        if positions.len() != self.vertices.len() {
            return Err(MeshError::AttributeLength {
                attribute: "positions",
                got: positions.len(),
                expected: self.vertices.len(),
            });
        }
        if let Some(i) = positions.iter().position(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(MeshError::NonFinite(i));
        }
        Ok(Self {
            vertices: positions,
            triangles: self.triangles.clone(),
            uvs: self.uvs.clone(),
            normals: self.normals.clone(),
        })
    }

    /// Drops stored normals, e.g. after a deformation invalidated them.
    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn uvs(&self) -> Option<&[Point2<f64>]> {
        self.uvs.as_deref()
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_points(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal `(b - a) x (c - a)`; its length is twice the area.
    pub fn face_area_vector(&self, t: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle_points(t);
        (b - a).cross(&(c - a))
    }

    /// Unit face normal, or zero for a degenerate triangle.
    pub fn face_normal(&self, t: usize) -> Vector3<f64> {
        let n = self.face_area_vector(t);
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vector3::zeros()
        }
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * self.face_area_vector(t).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn triangle_centroid(&self, t: usize) -> Point3<f64> {
        let [a, b, c] = self.triangle_points(t);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    pub fn bounding_box(&self) -> Aabb {
        Aabb::from_points(self.vertices.iter())
    }

    /// Unique undirected edges as sorted `[lo, hi]` pairs, in ascending order.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut set = BTreeSet::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                set.insert([a.min(b), a.max(b)]);
            }
        }
        set.into_iter().collect()
    }

    /// Sorted one-ring vertex neighbors for every vertex.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut neighbors = vec![Vec::new(); self.vertices.len()];
        for [a, b] in self.edges() {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        neighbors
    }

    /// Area-weighted vertex normals from the face normals.
    pub fn area_weighted_normals(&self) -> Vec<Vector3<f64>> {
        let mut acc = vec![Vector3::zeros(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let n = self.face_area_vector(t);
            for &v in tri {
                acc[v] += n;
            }
        }
        acc.into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    n
                }
            })
            .collect()
    }

    /// Reverses the orientation of every triangle. Stored normals are negated.
    pub fn flipped(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect(),
            uvs: self.uvs.clone(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| -n).collect()),
        }
    }

    /// Submesh made of the given triangles, with vertices reindexed compactly
    /// in order of first use.
    pub fn submesh(&self, triangles: &[usize]) -> Result<Self, MeshError> {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut kept = Vec::new();
        let mut tris = Vec::with_capacity(triangles.len());
        for &t in triangles {
            let mut out = [0; 3];
            for (k, &v) in self.triangles[t].iter().enumerate() {
                if remap[v] == usize::MAX {
                    remap[v] = kept.len();
                    kept.push(v);
                }
                out[k] = remap[v];
            }
            tris.push(out);
        }
        let mut mesh = TriMesh::new(kept.iter().map(|&v| self.vertices[v]).collect(), tris)?;
        if let Some(uvs) = &self.uvs {
            mesh.uvs = Some(kept.iter().map(|&v| uvs[v]).collect());
        }
        if let Some(normals) = &self.normals {
            mesh.normals = Some(kept.iter().map(|&v| normals[v]).collect());
        }
        Ok(mesh)
    }

    /// Euler characteristic `V - E + F` over the referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for tri in &self.triangles {
            for &v in tri {
                used[v] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edges().len() as i64 + self.triangles.len() as i64
    }

    pub fn into_parts(
        self,
    ) -> (
        Vec<Point3<f64>>,
        Vec<[usize; 3]>,
        Option<Vec<Point2<f64>>>,
        Option<Vec<Vector3<f64>>>,
    ) {
        (self.vertices, self.triangles, self.uvs, self.normals)
    }
}

/// Regular grid mesh on `[0,1]^2` at `z = 0` with `cells` quads per side and
/// identity UVs; each quad is split along its `(i,j)-(i+1,j+1)` diagonal.
pub fn unit_grid(cells: usize) -> TriMesh {
    let cells = cells.max(1);
    let n = cells + 1;
    let mut vertices = Vec::with_capacity(n * n);
    let mut uvs = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let (u, v) = (i as f64 / cells as f64, j as f64 / cells as f64);
            vertices.push(Point3::new(u, v, 0.0));
            uvs.push(Point2::new(u, v));
        }
    }
    let triangles = grid_triangles(n, n);
    TriMesh::new(vertices, triangles)
        .and_then(|m| m.with_uvs(uvs))
        .expect("grid is valid")
}

/// Counter-clockwise triangles for a row-major `nx x ny` vertex lattice.
pub(crate) fn grid_triangles(nx: usize, ny: usize) -> Vec<[usize; 3]> {
    let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let a = j * nx + i;
            let b = a + 1;
            let c = a + nx + 1;
            let d = a + nx;
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    triangles
}
