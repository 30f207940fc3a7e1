use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};

use super::{boundary_samples, objective, DeformField, FitError, SquareEmbedding};
use rand::RngCore;

use crate::rng::{self, seeded, unit_f64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub probes: usize,
    /// Probes redrawn because the perturbation changed a nearest-neighbor
    /// pairing or a LeakyReLU sign, where the loss is not differentiable.
    pub redrawn: usize,
    pub max_relative_error: f64,
}

/// Compares the analytic gradient of `chamfer + boundary` against central
/// differences with step `h`, one random parameter per probe, each probe on a
/// fresh random field and random small point sets.
///
/// Relative error is `|g - fd| / max(|g|, |fd|, 1e-8)`.
pub fn gradient_check(width: usize, probes: usize, h: f64, seed: u64) -> Result<GradientCheck, FitError> {
    let emb = SquareEmbedding::canonical();
    let mut rng = seeded(seed);
    let mut report = GradientCheck { probes: 0, redrawn: 0, max_relative_error: 0.0 };
    while report.probes < probes {
        if report.redrawn > 10 * probes + 100 {
            return Err(FitError::InvalidConfig("finite-difference probes keep hitting kinks".into()));
        }
        let mut field = DeformField::new(width, rng.next_u64())?;
        let grid: Vec<Point2<f64>> = (0..8).map(|_| Point2::new(unit_f64(&mut rng), unit_f64(&mut rng))).collect();
        let edge = boundary_samples(&mut rng, 4);
        let target: Vec<Point3<f64>> = (0..8)
            .map(|_| Point3::new(unit_f64(&mut rng), unit_f64(&mut rng), 0.2 * unit_f64(&mut rng)))
            .collect();
        let all: Vec<Point2<f64>> = grid.iter().chain(&edge).copied().collect();
        let eval = |f: &DeformField| -> Result<_, FitError> {
            let o = objective(f, &grid, &edge, &target, &emb, 1.0)?;
            let pattern = f.forward_cached(&all)?.activation_pattern();
            Ok((o, pattern))
        };
        let (base, pattern) = eval(&field)?;
        let k = rng::index(&mut rng, field.params().len());
        let theta = field.params()[k];
        field.params_mut()[k] = theta + h;
        let (plus, pat_plus) = eval(&field)?;
        field.params_mut()[k] = theta - h;
        let (minus, pat_minus) = eval(&field)?;
        let same = |o: &super::Objective, p: &Vec<bool>| o.p_to_q == base.p_to_q && o.q_to_p == base.q_to_p && *p == pattern;
        if !same(&plus, &pat_plus) || !same(&minus, &pat_minus) {
            report.redrawn += 1;
            continue;
        }
        let fd = (plus.loss - minus.loss) / (2.0 * h);
        let g = base.grad[k];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.probes += 1;
    }
    Ok(report)
}
