//! Generalized winding numbers and interior-point filtering.
//!
//! The exact evaluation sums the signed solid angle of every triangle with
//! the van Oosterom–Strackee formula. The accelerated evaluation walks a BVH
//! and replaces a whole subtree by its area-weighted dipole when
//!
//! ```text
//! r * A_total / (2 pi (d - r)^3) <= tolerance / 2
//! ```
//!
//! where `d` is the distance from the query to the subtree's area centroid and
//! `r` bounds the distance from that centroid to any of its vertices. Along
//! any segment inside the subtree the Hessian of `1/|x - q|` has spectral norm
//! at most `2 / (d - r)^3`, so the dipole error of the subtree is at most
//! `A_node * 2r / (4 pi (d - r)^3)`. The criterion caps that by
//! `tolerance / 2 * A_node / A_total`, and summing over the accepted subtrees
//! keeps the total error below `tolerance / 2`.

use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::mesh::{OrientedPointSet, TriMesh};
use crate::spatial::{closest_point_on_triangle, Bvh, BvhNode};

/// Queries closer than this to a triangle are refused.
pub const SURFACE_EPSILON: f64 = 1e-9;

/// Absolute error guaranteed by [`WindingTree::evaluate`].
pub const ACCELERATED_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum WindingError {
    #[error("query point lies on triangle {triangle} (distance {distance:e})")]
    OnSurface { triangle: usize, distance: f64 },
    #[error("interior threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
}

/// Signed solid angle subtended by triangle `(a, b, c)` at `q`.
pub fn solid_angle(q: &Point3<f64>, tri: &[Point3<f64>; 3]) -> f64 {
    let a = tri[0] - q;
    let b = tri[1] - q;
    let c = tri[2] - q;
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let num = a.dot(&b.cross(&c));
    let den = la * lb * lc + a.dot(&b) * lc + a.dot(&c) * lb + b.dot(&c) * la;
    2.0 * num.atan2(den)
}

/// Exact winding number: sum over all triangles in index order.
pub fn winding_number(mesh: &TriMesh, q: &Point3<f64>) -> Result<f64, WindingError> {
    let mut total = 0.0;
    for t in 0..mesh.triangle_count() {
        let tri = mesh.triangle_points(t);
        check_off_surface(q, &tri, t)?;
        total += solid_angle(q, &tri);
    }
    Ok(total / (4.0 * PI))
}

/// Exact winding number of a subset of triangles.
pub fn winding_number_subset(
    mesh: &TriMesh,
    triangles: &[usize],
    q: &Point3<f64>,
) -> Result<f64, WindingError> {
    let mut total = 0.0;
    for &t in triangles {
        let tri = mesh.triangle_points(t);
        check_off_surface(q, &tri, t)?;
        total += solid_angle(q, &tri);
    }
    Ok(total / (4.0 * PI))
}

fn check_off_surface(q: &Point3<f64>, tri: &[Point3<f64>; 3], t: usize) -> Result<(), WindingError> {
    let d = (closest_point_on_triangle(q, tri) - q).norm();
    if d <= SURFACE_EPSILON {
        Err(WindingError::OnSurface { triangle: t, distance: d })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Moment {
    /// Sum of area-weighted normals, `sum (1/2) (b - a) x (c - a)`.
    area_vector: Vector3<f64>,
    center: Point3<f64>,
    radius: f64,
}

/// BVH with per-node dipole moments for fast approximate winding numbers.
#[derive(Debug, Clone)]
pub struct WindingTree {
    bvh: Bvh,
    moments: Vec<Moment>,
    total_area: f64,
    tolerance: f64,
}

impl WindingTree {
    pub fn new(mesh: &TriMesh) -> Self {
        Self::with_tolerance(mesh, ACCELERATED_TOLERANCE)
    }

    pub fn with_tolerance(mesh: &TriMesh, tolerance: f64) -> Self {
        let bvh = Bvh::new(mesh);
        let total_area = mesh.total_area();
        let mut moments = Vec::with_capacity(bvh.nodes.len());
        for n in 0..bvh.nodes.len() {
            let tris = subtree_triangles(&bvh, n);
            let mut area_vector = Vector3::zeros();
            let mut weighted = Vector3::zeros();
            let mut area = 0.0;
            for &t in &tris {
                let [a, b, c] = bvh.triangle(t);
                let av = (b - a).cross(&(c - a)) * 0.5;
                let ar = av.norm();
                area_vector += av;
                weighted += (a.coords + b.coords + c.coords) / 3.0 * ar;
                area += ar;
            }
            let center = if area > 0.0 {
                Point3::from(weighted / area)
            } else {
                bvh.nodes[n].bounds().center()
            };
            let radius = tris
                .iter()
                .flat_map(|&t| bvh.triangle(t).iter())
                .map(|p| (p - center).norm())
                .fold(0.0, f64::max);
            moments.push(Moment { area_vector, center, radius });
        }
        Self { bvh, moments, total_area, tolerance }
    }

    /// Winding number with absolute error below the tree's tolerance.
    pub fn evaluate(&self, q: &Point3<f64>) -> Result<f64, WindingError> {
        if self.bvh.nodes.is_empty() {
            return Ok(0.0);
        }
        let budget = 0.5 * self.tolerance;
        let mut total = 0.0;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let m = &self.moments[n];
            let offset = m.center - q;
            let d = offset.norm();
            if d > m.radius {
                let gap = d - m.radius;
                if m.radius * self.total_area / (2.0 * PI * gap * gap * gap) <= budget {
                    // dipole: (1/4 pi) (c - q) . N / |c - q|^3, accumulated as a solid angle
                    total += offset.dot(&m.area_vector) / (d * d * d);
                    continue;
                }
            }
            match self.bvh.nodes[n] {
                BvhNode::Leaf { start, end, .. } => {
                    for &t in &self.bvh.order[start..end] {
                        let tri = self.bvh.triangle(t);
                        check_off_surface(q, tri, t)?;
                        total += solid_angle(q, tri);
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        Ok(total / (4.0 * PI))
    }
}

fn subtree_triangles(bvh: &Bvh, node: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut stack = vec![node];
    while let Some(n) = stack.pop() {
        match bvh.nodes[n] {
            BvhNode::Leaf { start, end, .. } => out.extend_from_slice(&bvh.order[start..end]),
            BvhNode::Inner { left, right, .. } => {
                stack.push(left);
                stack.push(right);
            }
        }
    }
    out
}

/// Keeps exactly the points with `|w| < threshold`, in their original order.
///
/// Winding numbers come from the accelerated tree. A point that sits on the
/// surface (as freshly sampled points do) is nudged along its own normal by
/// `1e-7` of the mesh bounding-box diagonal before evaluation.
pub fn filter_interior(
    points: &OrientedPointSet,
    mesh: &TriMesh,
    threshold: f64,
) -> Result<OrientedPointSet, WindingError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(WindingError::InvalidThreshold(threshold));
    }
    let tree = WindingTree::new(mesh);
    let nudge = 1e-7 * mesh.bounding_box().diagonal();
    let keep: Vec<bool> = points
        .points()
        .par_iter()
        .zip(points.normals().par_iter())
        .map(|(p, n)| {
            let w = match tree.evaluate(p) {
                Ok(w) => w,
                Err(WindingError::OnSurface { .. }) => {
                    let shifted = p + n * nudge;
                    match tree.evaluate(&shifted) {
                        Ok(w) => w,
                        Err(_) => tree.evaluate(&(p - n * nudge)).unwrap_or(0.0),
                    }
                }
                Err(e) => return Err(e),
            };
            Ok(w.abs() < threshold)
        })
        .collect::<Result<_, _>>()?;
    Ok(points.filter_indexed(|i| keep[i]))
}
