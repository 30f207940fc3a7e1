//! Turning an extracted part into a plane-attachable patch.
//!
//! The boundary is fitted with a least-squares plane and projected onto it,
//! the interior follows by a gradient-preserving deformation, and the result
//! is placed on a square tile in a canonical frame: plane `z = 0`, tangent
//! along `x`, boundary bounding box centered on `(0.5, 0.5)`.

mod deform;
mod stitch;

pub use deform::{deform_to_boundary, deformation_energy, laplacian_residual};
pub use stitch::{augment, smooth_seam, stitch_to_square, Stitched, TileFrame};

use nalgebra::{Matrix3, Point3, SymmetricEigen, Vector3};
use thiserror::Error;

use crate::mesh::{boundary_loops, BoundaryLoop, MeshError, TriMesh};

#[derive(Debug, Error)]
pub enum FlattenError {
    #[error("plane fitting needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("points are collinear or coincident")]
    RankDeficient,
    #[error("part must have exactly one boundary loop, found {0}")]
    BoundaryCount(usize),
    #[error("expected {expected} boundary positions, got {got}")]
    BoundaryLength { expected: usize, got: usize },
    #[error("interior vertex {0} is not connected to the boundary")]
    DisconnectedInterior(usize),
    #[error("conjugate gradient stopped after {iterations} iterations at relative residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("boundary vertex {vertex} is {distance:e} off the tile plane")]
    NotCoplanar { vertex: usize, distance: f64 },
    #[error("boundary edges {0} and {1} intersect in the plane")]
    SelfIntersecting(usize, usize),
    #[error("part footprint does not fit inside the tile")]
    FootprintExceedsTile,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value produced")]
    NonFinite,
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

impl FlattenError {
    pub fn is_numerical(&self) -> bool {
        matches!(self, FlattenError::NoConvergence { .. } | FlattenError::NonFinite)
    }
}

/// Oriented plane `{x : n . x = d}` with a right-handed frame `(t, b, n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
    pub tangent: Vector3<f64>,
    pub bitangent: Vector3<f64>,
}

impl Plane {
    /// Plane through `point` with unit `normal`; the tangent is the projection
    /// of the world axis least aligned with the normal.
    pub fn new(point: &Point3<f64>, normal: Vector3<f64>) -> Self {
        let n = normal.normalize();
        let axis = (0..3)
            .min_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs()))
            .unwrap_or(0);
        let e = Vector3::ith(axis, 1.0);
        let t = (e - n * e.dot(&n)).normalize();
        Self {
            normal: n,
            offset: n.dot(&point.coords),
            tangent: t,
            bitangent: n.cross(&t),
        }
    }

    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    pub fn project(&self, p: &Point3<f64>) -> Point3<f64> {
        p - self.normal * self.signed_distance(p)
    }

    /// Same plane with the normal flipped if `p` lies on the negative side.
    pub fn oriented_toward(self, p: &Point3<f64>) -> Self {
        if self.signed_distance(p) < 0.0 {
            let anchor = Point3::from(self.normal * self.offset);
            Plane::new(&anchor, -self.normal)
        } else {
            self
        }
    }

    /// Root-mean-square distance of `points` to the plane.
    pub fn residual(&self, points: &[Point3<f64>]) -> f64 {
        let s: f64 = points.iter().map(|p| self.signed_distance(p).powi(2)).sum();
        (s / points.len().max(1) as f64).sqrt()
    }
}

/// Least-squares plane through the centroid, normal along the smallest
/// covariance eigenvector. The sign makes the largest normal component positive.
pub fn fit_plane(points: &[Point3<f64>]) -> Result<Plane, FlattenError> {
    if points.len() < 3 {
        return Err(FlattenError::TooFewPoints(points.len()));
    }
    let n = points.len() as f64;
    let centroid = Point3::from(points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l1, l2) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(l2 > 0.0) || l1 <= 1e-12 * l2 {
        return Err(FlattenError::RankDeficient);
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let k = normal.iamax();
    if normal[k] < 0.0 {
        normal = -normal;
    }
    Ok(Plane::new(&centroid, normal))
}

/// A part with exactly one boundary loop, split into boundary set `B` and interior set `A`.
#[derive(Debug, Clone)]
pub struct PartPatch {
    mesh: TriMesh,
    boundary: BoundaryLoop,
    interior: Vec<usize>,
    edges: Vec<[usize; 2]>,
}

impl PartPatch {
    pub fn new(mesh: TriMesh) -> Result<Self, FlattenError> {
        let mut loops = boundary_loops(&mesh)?;
        if loops.len() != 1 {
            return Err(FlattenError::BoundaryCount(loops.len()));
        }
        let boundary = loops.remove(0);
        let mut on_boundary = vec![false; mesh.vertex_count()];
        for &v in &boundary.vertices {
            on_boundary[v] = true;
        }
        let interior = (0..mesh.vertex_count()).filter(|&v| !on_boundary[v]).collect();
        let edges = mesh.edges();
        Ok(Self { mesh, boundary, interior, edges })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn boundary(&self) -> &BoundaryLoop {
        &self.boundary
    }

    pub fn interior(&self) -> &[usize] {
        &self.interior
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn boundary_points(&self) -> Vec<Point3<f64>> {
        self.boundary.vertices.iter().map(|&v| self.mesh.vertices()[v]).collect()
    }

    pub fn mean_vertex(&self) -> Point3<f64> {
        let vs = self.mesh.vertices();
        Point3::from(vs.iter().map(|p| p.coords).sum::<Vector3<f64>>() / vs.len() as f64)
    }

    /// Boundary plane whose normal points to the side holding the mean vertex.
    pub fn boundary_plane(&self) -> Result<Plane, FlattenError> {
        Ok(fit_plane(&self.boundary_points())?.oriented_toward(&self.mean_vertex()))
    }
}

/// Orthogonal projection of every boundary vertex onto `plane`, in loop order.
pub fn project_boundary(patch: &PartPatch, plane: &Plane) -> Vec<Point3<f64>> {
    patch.boundary_points().iter().map(|p| plane.project(p)).collect()
}

/// Full flattening: fit the boundary plane, project the boundary, deform the
/// interior, and express the result in the tile frame with the boundary's
/// largest in-plane extent scaled to `footprint`.
pub fn flatten_part(mesh: TriMesh, footprint: f64) -> Result<(TriMesh, TileFrame), FlattenError> {
    let patch = PartPatch::new(mesh)?;
    let plane = patch.boundary_plane()?;
    let projected = project_boundary(&patch, &plane);
    let deformed = deform_to_boundary(&patch, &projected)?;
    let frame = TileFrame::fit(&plane, &projected, footprint)?;
    let tiled: Vec<Point3<f64>> = deformed.vertices().iter().map(|p| frame.to_tile(p)).collect();
    let mut out = deformed.with_positions(tiled)?;
    // exact zero height on the boundary, removing rounding from the frame change
    let mut pos = out.vertices().to_vec();
    for &v in &patch.boundary().vertices {
        pos[v].z = 0.0;
    }
    out = out.with_positions(pos)?;
    Ok((out, frame))
}
