use nalgebra::{Point2, Point3, Vector3};
use rayon::prelude::*;

use super::network::BackwardScratch;
use super::{DeformField, FitError, ForwardCache, SquareEmbedding};
use crate::spatial::KdTree;

/// Symmetric squared Chamfer distance with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ChamferResult {
    pub loss: f64,
    /// Gradient with respect to each point of `P`, pairings held fixed.
    pub grad: Vec<Vector3<f64>>,
    /// Nearest `Q` index for every `P` point.
    pub p_to_q: Vec<usize>,
    /// Nearest `P` index for every `Q` point.
    pub q_to_p: Vec<usize>,
}

fn usable(points: &[Point3<f64>]) -> bool {
    !points.is_empty() && points.iter().all(|p| p.coords.iter().all(|c| c.is_finite()))
}

fn nearest_all(tree: &KdTree, queries: &[Point3<f64>]) -> Vec<(usize, f64)> {
    queries
        .par_iter()
        .map(|q| tree.nearest(q).expect("tree is nonempty"))
        .collect()
}

/// `(1/|P|) sum_p min_q |p-q|^2 + (1/|Q|) sum_q min_p |p-q|^2`.
///
/// Nearest neighbors come from k-d trees with ties broken toward the lower
/// index. Sums run in index order, so the value does not depend on the thread
/// count. Returns `None` if either set is empty or holds a non-finite coordinate.
pub fn chamfer_loss(p: &[Point3<f64>], q: &[Point3<f64>]) -> Option<ChamferResult> {
    if !usable(p) || !usable(q) {
        return None;
    }
    let forward = nearest_all(&KdTree::new(q), p);
    let backward = nearest_all(&KdTree::new(p), q);
    Some(assemble(p, q, forward, backward))
}

fn assemble(
    p: &[Point3<f64>],
    q: &[Point3<f64>],
    forward: Vec<(usize, f64)>,
    backward: Vec<(usize, f64)>,
) -> ChamferResult {
    let (wp, wq) = (1.0 / p.len() as f64, 1.0 / q.len() as f64);
    let loss = wp * forward.iter().map(|f| f.1).sum::<f64>() + wq * backward.iter().map(|b| b.1).sum::<f64>();
    let mut grad: Vec<Vector3<f64>> = p
        .iter()
        .zip(&forward)
        .map(|(pi, &(j, _))| (pi - q[j]) * (2.0 * wp))
        .collect();
    for (qj, &(i, _)) in q.iter().zip(&backward) {
        grad[i] += (p[i] - qj) * (2.0 * wq);
    }
    ChamferResult {
        loss,
        grad,
        p_to_q: forward.iter().map(|f| f.0).collect(),
        q_to_p: backward.iter().map(|b| b.0).collect(),
    }
}

/// Linear-scan version of [`chamfer_loss`] with the same tie rule and summation order.
pub fn chamfer_loss_brute_force(p: &[Point3<f64>], q: &[Point3<f64>]) -> Option<ChamferResult> {
    if !usable(p) || !usable(q) {
        return None;
    }
    let scan = |from: &[Point3<f64>], to: &[Point3<f64>]| -> Vec<(usize, f64)> {
        from.iter()
            .map(|a| {
                to.iter().enumerate().fold((usize::MAX, f64::INFINITY), |best, (j, b)| {
                    let d = crate::spatial::dist2(a, b);
                    if d < best.1 {
                        (j, d)
                    } else {
                        best
                    }
                })
            })
            .collect()
    };
    Some(assemble(p, q, scan(p, q), scan(q, p)))
}

/// Mean squared deviation of boundary outputs from the embedded square, with
/// the gradient per output point.
pub fn boundary_terms(
    outputs: &[Point3<f64>],
    samples: &[Point2<f64>],
    embedding: &SquareEmbedding,
) -> (f64, Vec<Vector3<f64>>) {
    assert_eq!(outputs.len(), samples.len());
    if outputs.is_empty() {
        return (0.0, Vec::new());
    }
    let w = 1.0 / outputs.len() as f64;
    let diffs: Vec<Vector3<f64>> = outputs
        .iter()
        .zip(samples)
        .map(|(o, s)| o - embedding.proj(*s))
        .collect();
    let loss = w * diffs.iter().map(|d| d.norm_squared()).sum::<f64>();
    (loss, diffs.into_iter().map(|d| d * (2.0 * w)).collect())
}

/// `(1/|dP|) sum |phi(p) - proj(p)|^2` over boundary samples, and its parameter gradient.
pub fn boundary_loss(
    field: &DeformField,
    samples: &[Point2<f64>],
    embedding: &SquareEmbedding,
) -> Result<(f64, Vec<f64>), FitError> {
    let cache = field.forward_cached(samples)?;
    let (loss, grad) = boundary_terms(&cache.outputs(), samples, embedding);
    Ok((loss, field.backward(&cache, &grad)?))
}

/// Value and parameter gradient of `chamfer(phi(P), Q) + weight * boundary(phi(dP))`.
#[derive(Debug, Clone)]
pub struct Objective {
    pub loss: f64,
    pub chamfer: f64,
    pub boundary: f64,
    pub grad: Vec<f64>,
    pub p_to_q: Vec<usize>,
    pub q_to_p: Vec<usize>,
}

/// Buffers reused across optimization steps.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    inputs: Vec<Point2<f64>>,
    cache: ForwardCache,
    scratch: BackwardScratch,
    grad: Vec<f64>,
}

impl Workspace {
    /// Parameter gradient from the last [`objective_in`] call.
    pub fn grad(&self) -> &[f64] {
        &self.grad
    }
}

pub fn objective(
    field: &DeformField,
    grid: &[Point2<f64>],
    boundary: &[Point2<f64>],
    target: &[Point3<f64>],
    embedding: &SquareEmbedding,
    boundary_weight: f64,
) -> Result<Objective, FitError> {
    let mut ws = Workspace::default();
    let mut obj = objective_in(&mut ws, field, grid, boundary, target, embedding, boundary_weight)?;
    obj.grad = ws.grad;
    Ok(obj)
}

/// [`objective`] leaving the gradient in the workspace (`Objective::grad` is empty).
pub fn objective_in(
    ws: &mut Workspace,
    field: &DeformField,
    grid: &[Point2<f64>],
    boundary: &[Point2<f64>],
    target: &[Point3<f64>],
    embedding: &SquareEmbedding,
    boundary_weight: f64,
) -> Result<Objective, FitError> {
    if grid.is_empty() || target.is_empty() {
        return Err(FitError::EmptyTarget);
    }
    ws.inputs.clear();
    ws.inputs.extend(grid.iter().chain(boundary).copied());
    field.forward_into(&ws.inputs, &mut ws.cache)?;
    let outputs = ws.cache.outputs();
    let (deformed, edge) = outputs.split_at(grid.len());
    // Step 0 is a placeholder; callers know the actual step.
    let ch = chamfer_loss(deformed, target).ok_or(FitError::NonFiniteLoss { step: 0 })?;
    let (bl, bgrad) = boundary_terms(edge, boundary, embedding);
    let mut out_grad = ch.grad;
    out_grad.extend(bgrad.into_iter().map(|g| g * boundary_weight));
    ws.grad.resize(field.params().len(), 0.0);
    field.backward_into(&ws.cache, &out_grad, &mut ws.scratch, &mut ws.grad)?;
    Ok(Objective {
        loss: ch.loss + boundary_weight * bl,
        chamfer: ch.loss,
        boundary: bl,
        grad: Vec::new(),
        p_to_q: ch.p_to_q,
        q_to_p: ch.q_to_p,
    })
}
