use nalgebra::Point2;
use rayon::prelude::*;

use super::{chamfer_loss, grid_nodes, DeformField, FitError, SquareEmbedding};
use crate::mesh::{grid_triangles, OrientedPointSet, TriMesh};
use crate::spatial::{Bvh, KdTree};

/// Nodes per side of the grid used to triangulate the field surface (about 10^5 vertices).
pub const SURFACE_GRID: usize = 317;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldOutMetrics {
    /// Mean squared distance from held-out points to the triangulated field
    /// surface, plus mean squared distance from field vertices to the tangent
    /// plane of their nearest held-out point. Units of `side^2`.
    pub surface_chamfer: f64,
    /// Point-to-point Chamfer between the field vertices and the held-out points, units of `side^2`.
    pub point_chamfer: f64,
    pub points: usize,
}

/// Held-out evaluation of a fitted field.
///
/// Point-to-point Chamfer between two independent samplings of the same
/// surface is bounded below by the sampling density (about `1/(pi n)` per
/// direction for unit area), so the surface variant measures distance to the
/// continuous surfaces instead.
pub fn heldout_metrics(
    field: &DeformField,
    embedding: &SquareEmbedding,
    heldout: &OrientedPointSet,
) -> Result<HeldOutMetrics, FitError> {
    if heldout.is_empty() {
        return Err(FitError::EmptyTarget);
    }
    let nodes: Vec<Point2<f64>> = grid_nodes(SURFACE_GRID);
    let vertices = field.forward(&nodes)?;
    if vertices.iter().any(|v| !v.coords.iter().all(|c| c.is_finite())) {
        return Err(FitError::NonFiniteParameters);
    }
    let side2 = embedding.side * embedding.side;
    let surface = TriMesh::new(vertices.clone(), grid_triangles(SURFACE_GRID, SURFACE_GRID))?;
    let bvh = Bvh::new(&surface);
    let to_surface: Vec<f64> = heldout
        .points()
        .par_iter()
        .map(|p| bvh.closest_point(p).map_or(f64::INFINITY, |h| h.distance_squared))
        .collect();
    let tree = KdTree::new(heldout.points());
    let to_planes: Vec<f64> = vertices
        .par_iter()
        .map(|v| {
            let (j, _) = tree.nearest(v).expect("nonempty");
            let d = (v - heldout.points()[j]).dot(&heldout.normals()[j]);
            d * d
        })
        .collect();
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let point = chamfer_loss(&vertices, heldout.points()).expect("nonempty").loss;
    Ok(HeldOutMetrics {
        surface_chamfer: (mean(&to_surface) + mean(&to_planes)) / side2,
        point_chamfer: point / side2,
        points: heldout.len(),
    })
}
