use std::collections::VecDeque;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::{FlattenError, PartPatch};
use crate::mesh::TriMesh;

const CG_TOLERANCE: f64 = 1e-10;

/// Interior rows of the unit-weight graph Laplacian in CSR form.
struct InteriorLaplacian {
    diag: Vec<f64>,
    row_start: Vec<usize>,
    cols: Vec<usize>,
}

impl InteriorLaplacian {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.diag.len() {
            let mut s = self.diag[i] * x[i];
            for &j in &self.cols[self.row_start[i]..self.row_start[i + 1]] {
                s -= x[j];
            }
            out[i] = s;
        }
    }

    /// Jacobi-preconditioned conjugate gradient from a zero initial guess.
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>, FlattenError> {
        let n = b.len();
        let mut x = vec![0.0; n];
        let b_norm = norm(b);
        if b_norm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        let max_iter = 10 * n.max(1);
        for _ in 0..max_iter {
            self.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let res = norm(&r) / b_norm;
            if !res.is_finite() {
                return Err(FlattenError::NonFinite);
            }
            if res <= CG_TOLERANCE {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] / self.diag[i];
            }
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(FlattenError::NoConvergence {
            iterations: max_iter,
            residual: norm(&r) / b_norm,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Moves the boundary to `bprime` (in boundary-loop order) and places the
/// interior so that every edge vector changes as little as possible in the
/// least-squares sense.
///
/// Writing `u = x' - x`, the energy becomes the Dirichlet energy of `u` on
/// the edge graph, so each coordinate of the interior displacement solves
/// `L_AA u_A = sum of boundary displacements over boundary neighbors`.
pub fn deform_to_boundary(patch: &PartPatch, bprime: &[Point3<f64>]) -> Result<TriMesh, FlattenError> {
    let mesh = patch.mesh();
    let boundary = &patch.boundary().vertices;
    if bprime.len() != boundary.len() {
        return Err(FlattenError::BoundaryLength {
            expected: boundary.len(),
            got: bprime.len(),
        });
    }
    let nv = mesh.vertex_count();
    let mut displacement = vec![Vector3::zeros(); nv];
    let mut on_boundary = vec![false; nv];
    for (&v, target) in boundary.iter().zip(bprime) {
        displacement[v] = target - mesh.vertices()[v];
        on_boundary[v] = true;
    }
    let interior = patch.interior();
    if interior.is_empty() {
        let pos = (0..nv).map(|v| mesh.vertices()[v] + displacement[v]).collect();
        return Ok(mesh.with_positions(pos)?);
    }

    let neighbors = mesh.vertex_neighbors();
    check_connected(&neighbors, boundary, interior)?;

    let mut slot = vec![usize::MAX; nv];
    for (k, &v) in interior.iter().enumerate() {
        slot[v] = k;
    }
    let mut lap = InteriorLaplacian {
        diag: Vec::with_capacity(interior.len()),
        row_start: vec![0],
        cols: Vec::new(),
    };
    let mut rhs = vec![[0.0; 3]; interior.len()];
    for (k, &v) in interior.iter().enumerate() {
        lap.diag.push(neighbors[v].len() as f64);
        for &w in &neighbors[v] {
            if on_boundary[w] {
                for c in 0..3 {
                    rhs[k][c] += displacement[w][c];
                }
            } else {
                lap.cols.push(slot[w]);
            }
        }
        lap.row_start.push(lap.cols.len());
    }

    let solved: Vec<Vec<f64>> = (0..3)
        .into_par_iter()
        .map(|c| lap.solve(&rhs.iter().map(|r| r[c]).collect::<Vec<_>>()))
        .collect::<Result<_, _>>()?;
    for (k, &v) in interior.iter().enumerate() {
        displacement[v] = Vector3::new(solved[0][k], solved[1][k], solved[2][k]);
    }
    let pos: Vec<Point3<f64>> = (0..nv).map(|v| mesh.vertices()[v] + displacement[v]).collect();
    if pos.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
        return Err(FlattenError::NonFinite);
    }
    Ok(mesh.with_positions(pos)?)
}

fn check_connected(neighbors: &[Vec<usize>], boundary: &[usize], interior: &[usize]) -> Result<(), FlattenError> {
    let mut seen = vec![false; neighbors.len()];
    let mut queue: VecDeque<usize> = boundary.iter().copied().collect();
    for &b in boundary {
        seen[b] = true;
    }
    while let Some(v) = queue.pop_front() {
        for &w in &neighbors[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    match interior.iter().find(|&&v| !seen[v]) {
        Some(&v) => Err(FlattenError::DisconnectedInterior(v)),
        None => Ok(()),
    }
}

/// `sum over edges (p, q) of |(p' - q') - (p - q)|^2`.
pub fn deformation_energy(patch: &PartPatch, deformed: &[Point3<f64>]) -> f64 {
    let x = patch.mesh().vertices();
    patch
        .edges()
        .iter()
        .map(|&[p, q]| ((deformed[p] - deformed[q]) - (x[p] - x[q])).norm_squared())
        .sum()
}

/// Interior residual of the normal equations in position form:
/// returns `(max |L_AA A' - rhs|, max |rhs|)` over interior vertices and coordinates.
pub fn laplacian_residual(patch: &PartPatch, deformed: &[Point3<f64>]) -> (f64, f64) {
    let mesh = patch.mesh();
    let x = mesh.vertices();
    let neighbors = mesh.vertex_neighbors();
    let mut on_boundary = vec![false; mesh.vertex_count()];
    for &b in &patch.boundary().vertices {
        on_boundary[b] = true;
    }
    let mut res_max: f64 = 0.0;
    let mut rhs_max: f64 = 0.0;
    for &v in patch.interior() {
        let mut lhs = deformed[v].coords * neighbors[v].len() as f64;
        let mut rhs = Vector3::zeros();
        for &w in &neighbors[v] {
            rhs += x[v] - x[w];
            if on_boundary[w] {
                rhs += deformed[w].coords;
            } else {
                lhs -= deformed[w].coords;
            }
        }
        res_max = res_max.max((lhs - rhs).amax());
        rhs_max = rhs_max.max(rhs.amax());
    }
    (res_max, rhs_max)
}
