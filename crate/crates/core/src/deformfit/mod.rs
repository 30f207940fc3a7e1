//! Fitting a deformation field from the unit square onto a target surface.
//!
//! The field starts as a plane ([`init_to_plane`]) and is then optimized with
//! Adam on `chamfer(phi(P), Q) + w * boundary(phi(dP))` ([`fit`]). The fitted
//! displacement relative to the embedded square is read out as a
//! [`VdmImage`] by [`extract_vdm`].

mod chamfer;
mod gradcheck;
mod metric;
mod network;

use std::time::Instant;

use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chamfer::{
    boundary_loss, boundary_terms, chamfer_loss, chamfer_loss_brute_force, objective, objective_in, ChamferResult, Objective,
    Workspace,
};
pub use gradcheck::{gradient_check, GradientCheck};
pub use metric::{heldout_metrics, HeldOutMetrics, SURFACE_GRID};
pub use network::{Adam, BackwardScratch, DeformField, ForwardCache, DEFAULT_WIDTH, LAYER_COUNT, NEGATIVE_SLOPE, RESIDUAL_LAYER};

use crate::flatten::Plane;
use crate::mesh::{sample_surface, MeshError, OrientedPointSet, TriMesh};
use crate::rng::{self, seeded, unit_f64, Rng};
use crate::vdm::{VdmImage, VdmMetadata};

/// Number of surface samples drawn from a mesh target for training, and again
/// (with a different seed) for held-out evaluation.
pub const MESH_TARGET_SAMPLES: usize = 100_000;

/// Upper bound on the held-out split of a point-set target.
pub const MAX_HELDOUT: usize = 100_000;

/// Side of the validation grid checked by [`init_to_plane`].
pub const INIT_VALIDATION_GRID: usize = 64;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("target point set is empty")]
    EmptyTarget,
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("network parameters are not finite")]
    NonFiniteParameters,
    #[error("plane initialization stalled at validation loss {loss:e} (threshold {threshold:e})")]
    InitNotConverged { loss: f64, threshold: f64 },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("VDM resolution {0} outside [16, 4096]")]
    InvalidResolution(usize),
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("field output is not finite at pixel {pixel}")]
    NonFiniteOutput { pixel: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

impl FitError {
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            FitError::NonFiniteLoss { .. }
                | FitError::NonFiniteParameters
                | FitError::InitNotConverged { .. }
                | FitError::NonFiniteOutput { .. }
        )
    }
}

/// Square `[0,1]^2` placed in space: `proj(u, v) = center + side ((u - .5) t + (v - .5) b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareEmbedding {
    pub plane: Plane,
    pub side: f64,
    pub center: Point3<f64>,
}

impl SquareEmbedding {
    pub fn new(plane: Plane, side: f64, center: Point3<f64>) -> Result<Self, FitError> {
        if !(side > 0.0 && side.is_finite()) {
            return Err(FitError::InvalidEmbedding(format!("side {side} must be positive")));
        }
        let (t, b, n) = (plane.tangent, plane.bitangent, plane.normal);
        let frame_error = [t.norm() - 1.0, b.norm() - 1.0, n.norm() - 1.0, t.dot(&b), t.dot(&n), b.dot(&n)]
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        if frame_error > 1e-9 || t.cross(&b).dot(&n) < 0.0 {
            return Err(FitError::InvalidEmbedding("frame is not right-handed orthonormal".into()));
        }
        Ok(Self { plane, side, center })
    }

    /// The tile frame: unit square in the `z = 0` plane with `t = +x`, `b = +y`.
    pub fn canonical() -> Self {
        let center = Point3::new(0.5, 0.5, 0.0);
        Self { plane: Plane::new(&center, Vector3::z()), side: 1.0, center }
    }

    pub fn proj(&self, p: Point2<f64>) -> Point3<f64> {
        self.center + (self.plane.tangent * (p.x - 0.5) + self.plane.bitangent * (p.y - 0.5)) * self.side
    }

    /// World vector expressed in `(t, b, n)` and divided by the side length.
    pub fn to_local(&self, d: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(d.dot(&self.plane.tangent), d.dot(&self.plane.bitangent), d.dot(&self.plane.normal)) / self.side
    }

    pub fn from_local(&self, d: &Vector3<f64>) -> Vector3<f64> {
        (self.plane.tangent * d.x + self.plane.bitangent * d.y + self.plane.normal * d.z) * self.side
    }
}

/// Settings of the plane initialization. Training points are fixed: the
/// `grid x grid` cell centers plus `boundary_samples` evenly spaced points on
/// the square boundary, all used every epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub learning_rate: f64,
    /// The rate decays exponentially from `learning_rate` to this over the epoch budget.
    pub final_learning_rate: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub grid: usize,
    pub boundary_samples: usize,
    /// Required validation MSE in units of `side^2`.
    pub tolerance: f64,
    /// Stop early once the validation MSE falls below this (units of `side^2`).
    pub early_stop: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            final_learning_rate: 1e-5,
            warmup_epochs: 100,
            epochs: 2000,
            grid: 32,
            boundary_samples: 128,
            tolerance: 1e-5,
            early_stop: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub grid_samples_per_step: usize,
    pub target_samples_per_step: usize,
    pub boundary_samples_per_step: usize,
    pub boundary_weight: f64,
    pub seed: u64,
    /// Hidden width used when a fresh field is created.
    pub width: usize,
    pub init: InitConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            epochs: 3000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grid_samples_per_step: 128 * 128,
            target_samples_per_step: 16384,
            boundary_samples_per_step: 1024,
            boundary_weight: 1.0,
            seed: 0,
            width: DEFAULT_WIDTH,
            init: InitConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |m: &str| Err(FitError::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if [self.epochs, self.grid_samples_per_step, self.target_samples_per_step, self.boundary_samples_per_step, self.width]
            .contains(&0)
        {
            return bad("epochs, sample counts and width must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("Adam requires beta in [0, 1) and epsilon > 0");
        }
        if !(self.boundary_weight >= 0.0 && self.boundary_weight.is_finite()) {
            return bad("boundary_weight must be finite and non-negative");
        }
        let init = &self.init;
        if !(init.learning_rate > 0.0 && init.final_learning_rate > 0.0) || init.epochs == 0 || init.grid == 0 || init.tolerance <= 0.0 {
            return bad("init requires positive learning rate, epochs, grid and tolerance");
        }
        Ok(())
    }
}

/// What to fit against.
#[derive(Debug, Clone)]
pub enum FitTarget {
    /// Sampled with [`MESH_TARGET_SAMPLES`] points for training and again for evaluation.
    Mesh(TriMesh),
    /// Split by a seeded shuffle; the held-out part has `min(100000, n/5)` points (at least one).
    Points(OrientedPointSet),
    /// Explicit training and held-out sets.
    Split { train: OrientedPointSet, heldout: OrientedPointSet },
}

impl FitTarget {
    /// Training and held-out sets for a fit seeded with `seed`.
    pub fn prepare(&self, seed: u64) -> Result<(OrientedPointSet, OrientedPointSet), FitError> {
        match self {
            FitTarget::Mesh(mesh) => {
                let (train, _) = sample_surface(mesh, MESH_TARGET_SAMPLES, derive_seed(seed, 1))?;
                let (heldout, _) = sample_surface(mesh, MESH_TARGET_SAMPLES, derive_seed(seed, 2))?;
                Ok((train, heldout))
            }
            FitTarget::Points(points) => {
                if points.len() < 2 {
                    return Err(FitError::EmptyTarget);
                }
                let mut order: Vec<usize> = (0..points.len()).collect();
                let mut rng = seeded(derive_seed(seed, 3));
                for i in (1..order.len()).rev() {
                    order.swap(i, rng::index(&mut rng, i + 1));
                }
                let held = (points.len() / 5).clamp(1, MAX_HELDOUT);
                Ok((points.select(&order[held..]), points.select(&order[..held])))
            }
            FitTarget::Split { train, heldout } => {
                if train.is_empty() || heldout.is_empty() {
                    return Err(FitError::EmptyTarget);
                }
                Ok((train.clone(), heldout.clone()))
            }
        }
    }
}

/// Independent stream seeds derived from the user seed.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Jittered stratified samples: a `s x s` grid with `s = floor(sqrt(count))`,
/// one uniform point per cell, then `count - s^2` uniform points.
pub fn stratified_grid(rng: &mut Rng, count: usize) -> Vec<Point2<f64>> {
    let s = (count as f64).sqrt().floor() as usize;
    let mut pts = Vec::with_capacity(count);
    for j in 0..s {
        for i in 0..s {
            let (ju, jv) = (unit_f64(rng), unit_f64(rng));
            pts.push(Point2::new((i as f64 + ju) / s as f64, (j as f64 + jv) / s as f64));
        }
    }
    while pts.len() < count {
        pts.push(Point2::new(unit_f64(rng), unit_f64(rng)));
    }
    pts
}

/// Point on the square boundary at arc-length parameter `s` in `[0, 4)`,
/// counter-clockwise from the origin.
fn boundary_point(s: f64) -> Point2<f64> {
    let edge = (s.floor() as usize).min(3);
    let a = s - edge as f64;
    match edge {
        0 => Point2::new(a, 0.0),
        1 => Point2::new(1.0, a),
        2 => Point2::new(1.0 - a, 1.0),
        _ => Point2::new(0.0, 1.0 - a),
    }
}

/// Uniform samples on the boundary of the unit square.
pub fn boundary_samples(rng: &mut Rng, count: usize) -> Vec<Point2<f64>> {
    (0..count).map(|_| boundary_point(4.0 * unit_f64(rng))).collect()
}

fn cell_centers(n: usize) -> Vec<Point2<f64>> {
    (0..n * n)
        .map(|k| Point2::new(((k % n) as f64 + 0.5) / n as f64, ((k / n) as f64 + 0.5) / n as f64))
        .collect()
}

fn grid_nodes(n: usize) -> Vec<Point2<f64>> {
    let d = (n - 1) as f64;
    (0..n * n)
        .map(|k| Point2::new((k % n) as f64 / d, (k / n) as f64 / d))
        .collect()
}

fn mean_squared_deviation(outputs: &[Point3<f64>], inputs: &[Point2<f64>], emb: &SquareEmbedding) -> f64 {
    outputs
        .iter()
        .zip(inputs)
        .map(|(o, p)| (o - emb.proj(*p)).norm_squared())
        .sum::<f64>()
        / outputs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub loss_trace: Vec<f64>,
    /// MSE against `proj` on the 64 x 64 validation grid, in units of `side^2`.
    pub validation_mse: f64,
    pub epochs_run: usize,
}

/// Trains the field so that `phi(p) = proj(p)` on the square, by full-batch
/// Adam on the mean squared deviation.
///
/// The learning rate ramps up linearly over `warmup_epochs`, then decays
/// exponentially to `final_learning_rate` at the end of the budget.
///
/// Fails with [`FitError::InitNotConverged`] unless the validation MSE over a
/// 64 x 64 node grid ends below `tolerance * side^2`.
pub fn init_to_plane(
    mut field: DeformField,
    embedding: &SquareEmbedding,
    config: &InitConfig,
) -> Result<(DeformField, InitReport), FitError> {
    if config.epochs == 0 || config.grid == 0 || !(config.learning_rate > 0.0 && config.final_learning_rate > 0.0) {
        return Err(FitError::InvalidConfig("init needs positive epochs, grid and learning rate".into()));
    }
    let n = config.boundary_samples;
    let mut train = cell_centers(config.grid);
    train.extend((0..n).map(|k| boundary_point(4.0 * k as f64 / n as f64)));
    let targets: Vec<Point3<f64>> = train.iter().map(|p| embedding.proj(*p)).collect();
    let validation = grid_nodes(INIT_VALIDATION_GRID);
    let side2 = embedding.side * embedding.side;
    let validate = |f: &DeformField| -> Result<f64, FitError> {
        Ok(mean_squared_deviation(&f.forward(&validation)?, &validation, embedding) / side2)
    };

    let mut adam = Adam::new(field.params().len(), config.learning_rate, 0.9, 0.999, 1e-8);
    let w = 2.0 / train.len() as f64;
    let (mut cache, mut scratch) = (ForwardCache::default(), BackwardScratch::default());
    let mut evaluate = |f: &DeformField, g: &mut Vec<f64>| -> Result<f64, FitError> {
        f.forward_into(&train, &mut cache)?;
        let outputs = cache.outputs();
        let loss = mean_squared_deviation(&outputs, &train, embedding);
        let out_grad: Vec<Vector3<f64>> = outputs.iter().zip(&targets).map(|(o, t)| (o - t) * w).collect();
        g.resize(f.params().len(), 0.0);
        f.backward_into(&cache, &out_grad, &mut scratch, g)?;
        Ok(loss)
    };
    let mut grad = Vec::new();
    let mut loss = evaluate(&field, &mut grad)?;
    if !loss.is_finite() {
        return Err(FitError::NonFiniteLoss { step: 0 });
    }
    let mut trace = vec![loss / side2];
    let decay = (config.final_learning_rate / config.learning_rate).ln() / (config.epochs.max(2) - 1) as f64;
    let mut epochs_run = 0;
    for epoch in 0..config.epochs {
        let warm = ((epoch + 1) as f64 / config.warmup_epochs.max(1) as f64).min(1.0);
        adam.learning_rate = config.learning_rate * (decay * epoch as f64).exp() * warm;
        adam.step(field.params_mut(), &grad);
        loss = evaluate(&field, &mut grad)?;
        if !loss.is_finite() {
            return Err(FitError::NonFiniteLoss { step: epoch + 1 });
        }
        trace.push(loss / side2);
        epochs_run = epoch + 1;
        if epochs_run % 50 == 0 && validate(&field)? < config.early_stop {
            break;
        }
    }
    let validation_mse = validate(&field)?;
    if !(validation_mse < config.tolerance) {
        return Err(FitError::InitNotConverged { loss: validation_mse, threshold: config.tolerance });
    }
    Ok((field, InitReport { loss_trace: trace, validation_mse, epochs_run }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    /// Objective value at the last step.
    pub final_loss: f64,
    /// Held-out Chamfer against the field surface, units of `side^2`.
    pub heldout_chamfer: f64,
    /// Plain point-to-point Chamfer between field grid samples and the held-out set, units of `side^2`.
    pub heldout_point_chamfer: f64,
    pub heldout_points: usize,
}

/// Wall-clock timings; everything else in a report is reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub init_seconds: f64,
    pub fit_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub seed: u64,
    pub threads: usize,
    pub width: usize,
    pub parameter_count: usize,
    pub config: FitConfig,
    pub side: f64,
    pub init: Option<InitReport>,
    pub loss_trace: Vec<f64>,
    pub chamfer_trace: Vec<f64>,
    pub boundary_trace: Vec<f64>,
    pub metrics: FinalMetrics,
    pub timing: Timing,
}

/// Optimizes an initialized field against `target` for `config.epochs` Adam steps.
///
/// `Q` is one subsample of `target_samples_per_step` distinct training points
/// (the whole set when it is not larger), drawn once from a stream seeded by
/// `config.seed`. Each step then draws a jittered stratified grid `P` and
/// uniform boundary samples `dP` from a second stream.
pub fn fit(
    mut field: DeformField,
    target: &FitTarget,
    embedding: &SquareEmbedding,
    config: &FitConfig,
) -> Result<(DeformField, FitReport), FitError> {
    config.validate()?;
    let started = Instant::now();
    let (train, heldout) = target.prepare(config.seed)?;
    let mut rng = seeded(derive_seed(config.seed, 4));
    let mut adam = Adam::new(
        field.params().len(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let side2 = embedding.side * embedding.side;
    let (mut loss_trace, mut chamfer_trace, mut boundary_trace) = (Vec::new(), Vec::new(), Vec::new());
    let q: Vec<Point3<f64>> = if train.len() <= config.target_samples_per_step {
        train.points().to_vec()
    } else {
        let mut qrng = seeded(derive_seed(config.seed, 5));
        let mut picked = rand::seq::index::sample(&mut qrng, train.len(), config.target_samples_per_step).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| train.points()[i]).collect()
    };
    let mut ws = Workspace::default();
    for step in 0..config.epochs {
        let grid = stratified_grid(&mut rng, config.grid_samples_per_step);
        let edge = boundary_samples(&mut rng, config.boundary_samples_per_step);
        let obj = objective_in(&mut ws, &field, &grid, &edge, &q, embedding, config.boundary_weight).map_err(|e| match e {
            FitError::NonFiniteLoss { .. } => FitError::NonFiniteLoss { step },
            other => other,
        })?;
        if !obj.loss.is_finite() || ws.grad().iter().any(|g| !g.is_finite()) {
            return Err(FitError::NonFiniteLoss { step });
        }
        loss_trace.push(obj.loss / side2);
        chamfer_trace.push(obj.chamfer / side2);
        boundary_trace.push(obj.boundary / side2);
        adam.step(field.params_mut(), ws.grad());
        log::debug!("step {step}: loss {:.3e}", obj.loss);
    }
    let fit_seconds = started.elapsed().as_secs_f64();
    let eval_started = Instant::now();
    let held = heldout_metrics(&field, embedding, &heldout)?;
    let report = FitReport {
        seed: config.seed,
        threads: rayon::current_num_threads(),
        width: field.width(),
        parameter_count: field.params().len(),
        config: config.clone(),
        side: embedding.side,
        init: None,
        metrics: FinalMetrics {
            final_loss: loss_trace.last().copied().unwrap_or(f64::NAN),
            heldout_chamfer: held.surface_chamfer,
            heldout_point_chamfer: held.point_chamfer,
            heldout_points: held.points,
        },
        loss_trace,
        chamfer_trace,
        boundary_trace,
        timing: Timing { init_seconds: 0.0, fit_seconds, eval_seconds: eval_started.elapsed().as_secs_f64() },
    };
    Ok((field, report))
}

/// Creates a field of `config.width`, initializes it to the plane and fits it.
pub fn fit_from_scratch(
    target: &FitTarget,
    embedding: &SquareEmbedding,
    config: &FitConfig,
) -> Result<(DeformField, FitReport), FitError> {
    config.validate()?;
    let started = Instant::now();
    let field = DeformField::new(config.width, derive_seed(config.seed, 5))?;
    let (field, init) = init_to_plane(field, embedding, &config.init)?;
    let init_seconds = started.elapsed().as_secs_f64();
    let (field, mut report) = fit(field, target, embedding, config)?;
    report.init = Some(init);
    report.timing.init_seconds = init_seconds;
    Ok((field, report))
}

pub const MIN_VDM_RESOLUTION: usize = 16;
pub const MAX_VDM_RESOLUTION: usize = 4096;

/// Samples the field at pixel centers `((i + .5)/R, (j + .5)/R)` and stores
/// `phi(p) - proj(p)` in the `(t, b, n)` frame, in units of the side length.
pub fn extract_vdm(field: &DeformField, embedding: &SquareEmbedding, resolution: usize) -> Result<VdmImage, FitError> {
    extract_vdm_with(|pts| field.forward(pts), embedding, resolution)
}

/// [`extract_vdm`] for any batch map `[0,1]^2 -> R^3`.
pub fn extract_vdm_with(
    map: impl Fn(&[Point2<f64>]) -> Result<Vec<Point3<f64>>, FitError>,
    embedding: &SquareEmbedding,
    resolution: usize,
) -> Result<VdmImage, FitError> {
    if !(MIN_VDM_RESOLUTION..=MAX_VDM_RESOLUTION).contains(&resolution) {
        return Err(FitError::InvalidResolution(resolution));
    }
    let r = resolution;
    let mut data = Vec::with_capacity(r * r);
    // rows of pixels per batch keep the activation cache small at large R
    let rows_per_chunk = (16384 / r).max(1);
    for j0 in (0..r).step_by(rows_per_chunk) {
        let j1 = (j0 + rows_per_chunk).min(r);
        let pts: Vec<Point2<f64>> = (j0 * r..j1 * r)
            .map(|k| Point2::new(((k % r) as f64 + 0.5) / r as f64, ((k / r) as f64 + 0.5) / r as f64))
            .collect();
        for (k, (p, q)) in pts.iter().zip(map(&pts)?).enumerate() {
            let d = embedding.to_local(&(q - embedding.proj(*p)));
            let px = [d.x as f32, d.y as f32, d.z as f32];
            if px.iter().any(|c| !c.is_finite()) {
                return Err(FitError::NonFiniteOutput { pixel: j0 * r + k });
            }
            data.push(px);
        }
    }
    let metadata = VdmMetadata { source: "deformation-field".into(), ..VdmMetadata::default() };
    Ok(VdmImage::new(r, data, metadata).expect("finite square image"))
}

#[cfg(test)]
mod tests;
