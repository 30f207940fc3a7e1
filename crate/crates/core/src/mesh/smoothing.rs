use nalgebra::Point3;

use super::{MeshError, TriMesh};

/// Uniform-weight Laplacian smoothing restricted to `subset`.
///
/// Each iteration moves every selected vertex by `lambda` toward the mean of
/// its one-ring neighbors, using positions from the previous iteration.
/// Unselected vertices never move; selected vertices without neighbors are
/// left in place with a warning.
pub fn laplacian_smooth(
    mesh: &TriMesh,
    subset: &[usize],
    iterations: usize,
    lambda: f64,
) -> Result<TriMesh, MeshError> {
    let neighbors = mesh.vertex_neighbors();
    let mut active = Vec::with_capacity(subset.len());
    for &v in subset {
        if v >= mesh.vertex_count() {
            return Err(MeshError::InvalidVertex(v));
        }
        if neighbors[v].is_empty() {
            log::warn!("laplacian_smooth: vertex {v} has no neighbors; left unchanged");
        } else {
            active.push(v);
        }
    }
    active.sort_unstable();
    active.dedup();

    let mut positions = mesh.vertices().to_vec();
    let mut next = positions.clone();
    for _ in 0..iterations {
        for &v in &active {
            let ring = &neighbors[v];
            let mut mean = nalgebra::Vector3::zeros();
            for &n in ring {
                mean += positions[n].coords;
            }
            mean /= ring.len() as f64;
            let p = positions[v].coords;
            next[v] = Point3::from(p + (mean - p) * lambda);
        }
        positions.copy_from_slice(&next);
    }
    mesh.with_positions(positions)
}
