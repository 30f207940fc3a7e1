use nalgebra::{Point2, Point3, Vector3};

use super::FitError;
use crate::rng::{seeded, uniform};

/// Hidden width used by default.
pub const DEFAULT_WIDTH: usize = 512;

/// Number of linear layers.
pub const LAYER_COUNT: usize = 8;

/// Hidden layer whose input is added back to its activated output.
pub const RESIDUAL_LAYER: usize = 3;

pub const NEGATIVE_SLOPE: f64 = 0.01;

#[inline]
fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        NEGATIVE_SLOPE * z
    }
}

#[inline]
fn leaky_slope(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        NEGATIVE_SLOPE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    input: usize,
    output: usize,
    offset: usize,
}

impl Layer {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.input * self.output
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.input * self.output;
        start..start + self.output
    }

    fn end(&self) -> usize {
        self.offset + (self.input + 1) * self.output
    }
}

fn layout(width: usize) -> Vec<Layer> {
    let mut dims = vec![2];
    dims.extend(std::iter::repeat(width).take(LAYER_COUNT - 1));
    dims.push(3);
    let mut offset = 0;
    dims.windows(2)
        .map(|w| {
            let layer = Layer { input: w[0], output: w[1], offset };
            offset = layer.end();
            layer
        })
        .collect()
}

/// `C = A B` for row-major `A` (m x k) given by strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * rsa + k.saturating_sub(1) * csa || k == 0);
    assert!(b.len() > k.saturating_sub(1) * rsb + (n - 1) * csb || k == 0);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// The deformation field `phi: [0,1]^2 -> R^3`.
///
/// Eight fully connected layers `2 -> W -> ... -> W -> 3` with LeakyReLU
/// (slope 0.01) on the seven hidden layers and a linear output. The fourth
/// layer adds its input to its activated output. Parameters live in one flat
/// vector, layer by layer, each as a row-major `out x in` weight block followed
/// by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformField {
    width: usize,
    params: Vec<f64>,
}

/// Activations kept by [`DeformField::forward_cached`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    rows: usize,
    /// Input of every layer, `rows x layer.input`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn outputs(&self) -> Vec<Point3<f64>> {
        self.output
            .chunks_exact(3)
            .map(|r| Point3::new(r[0], r[1], r[2]))
            .collect()
    }

    /// Activation pattern of the hidden units (`true` where the pre-activation is positive).
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.pre.iter().flatten().map(|&z| z > 0.0).collect()
    }
}

impl DeformField {
    pub const fn parameter_count(width: usize) -> usize {
        6 * width * width + 12 * width + 3
    }

    /// Fan-in scaled uniform initialization: every weight and bias of a layer
    /// with fan-in `k` is drawn from `U(-1/sqrt(k), 1/sqrt(k))`.
    pub fn new(width: usize, seed: u64) -> Result<Self, FitError> {
        let mut field = Self::zeros(width)?;
        let mut rng = seeded(seed);
        for layer in layout(width) {
            let bound = 1.0 / (layer.input as f64).sqrt();
            for p in &mut field.params[layer.offset..layer.end()] {
                *p = uniform(&mut rng, -bound, bound);
            }
        }
        Ok(field)
    }

    pub fn zeros(width: usize) -> Result<Self, FitError> {
        Self::from_params(width, vec![0.0; Self::parameter_count(width)])
    }

    pub fn from_params(width: usize, params: Vec<f64>) -> Result<Self, FitError> {
        if width == 0 {
            return Err(FitError::InvalidConfig("network width must be at least 1".into()));
        }
        let expected = Self::parameter_count(width);
        assert_eq!(
            layout(width).last().map(Layer::end),
            Some(expected),
            "layer layout disagrees with the parameter-count formula"
        );
        if params.len() != expected {
            return Err(FitError::ShapeMismatch { expected, actual: params.len() });
        }
        Ok(Self { width, params })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    fn check_finite(&self) -> Result<(), FitError> {
        if self.params.iter().all(|p| p.is_finite()) {
            Ok(())
        } else {
            Err(FitError::NonFiniteParameters)
        }
    }

    pub fn forward(&self, points: &[Point2<f64>]) -> Result<Vec<Point3<f64>>, FitError> {
        Ok(self.forward_cached(points)?.outputs())
    }

    pub fn forward_point(&self, p: Point2<f64>) -> Result<Point3<f64>, FitError> {
        Ok(self.forward(&[p])?[0])
    }

    /// Evaluates the batch and keeps the activations needed by [`Self::backward`].
    ///
    /// Inputs outside `[0,1]^2` are evaluated as-is.
    pub fn forward_cached(&self, points: &[Point2<f64>]) -> Result<ForwardCache, FitError> {
        let mut cache = ForwardCache::default();
        self.forward_into(points, &mut cache)?;
        Ok(cache)
    }

    /// [`Self::forward_cached`] reusing the buffers of an existing cache.
    pub fn forward_into(&self, points: &[Point2<f64>], cache: &mut ForwardCache) -> Result<(), FitError> {
        self.check_finite()?;
        let rows = points.len();
        cache.rows = rows;
        cache.inputs.resize_with(LAYER_COUNT, Vec::new);
        cache.pre.resize_with(LAYER_COUNT - 1, Vec::new);
        cache.inputs[0].clear();
        cache.inputs[0].extend(points.iter().flat_map(|p| [p.x, p.y]));
        for (l, layer) in layout(self.width).iter().enumerate() {
            let z = if l + 1 == LAYER_COUNT { &mut cache.output } else { &mut cache.pre[l] };
            z.resize(rows * layer.output, 0.0);
            let (done, rest) = cache.inputs.split_at_mut(l + 1);
            let h = &done[l];
            gemm(
                rows,
                layer.input,
                layer.output,
                h,
                (layer.input, 1),
                &self.params[layer.weights()],
                (1, layer.input),
                z,
            );
            let bias = &self.params[layer.bias()];
            for row in z.chunks_exact_mut(layer.output) {
                row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
            }
            if l + 1 == LAYER_COUNT {
                break;
            }
            let next = &mut rest[0];
            next.clear();
            next.extend(z.iter().map(|&v| leaky(v)));
            if l == RESIDUAL_LAYER {
                next.iter_mut().zip(h).for_each(|(a, b)| *a += b);
            }
        }
        Ok(())
    }

    /// Gradient of `sum_i <output_i, output_grad_i>` with respect to the parameters.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[Vector3<f64>]) -> Result<Vec<f64>, FitError> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(cache, output_grad, &mut BackwardScratch::default(), &mut grad)?;
        Ok(grad)
    }

    /// [`Self::backward`] writing into `grad` and reusing scratch buffers.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        output_grad: &[Vector3<f64>],
        scratch: &mut BackwardScratch,
        grad: &mut [f64],
    ) -> Result<(), FitError> {
        if output_grad.len() != cache.rows {
            return Err(FitError::ShapeMismatch { expected: cache.rows, actual: output_grad.len() });
        }
        if grad.len() != self.params.len() {
            return Err(FitError::ShapeMismatch { expected: self.params.len(), actual: grad.len() });
        }
        let rows = cache.rows;
        let BackwardScratch { upstream, dz, dh } = scratch;
        upstream.clear();
        upstream.extend(output_grad.iter().flat_map(|g| [g.x, g.y, g.z]));
        for (l, layer) in layout(self.width).iter().enumerate().rev() {
            dz.clear();
            if l + 1 == LAYER_COUNT {
                dz.extend_from_slice(upstream);
            } else {
                dz.extend(upstream.iter().zip(&cache.pre[l]).map(|(g, &z)| g * leaky_slope(z)));
            }
            gemm(
                layer.output,
                rows,
                layer.input,
                dz,
                (1, layer.output),
                &cache.inputs[l],
                (layer.input, 1),
                &mut grad[layer.weights()],
            );
            let db = &mut grad[layer.bias()];
            db.iter_mut().for_each(|d| *d = 0.0);
            for row in dz.chunks_exact(layer.output) {
                db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
            }
            if l == 0 {
                break;
            }
            dh.resize(rows * layer.input, 0.0);
            gemm(
                rows,
                layer.output,
                layer.input,
                dz,
                (layer.output, 1),
                &self.params[layer.weights()],
                (layer.input, 1),
                dh,
            );
            if l == RESIDUAL_LAYER {
                dh.iter_mut().zip(upstream.iter()).for_each(|(a, b)| *a += b);
            }
            std::mem::swap(upstream, dh);
        }
        Ok(())
    }
}

/// Reusable buffers for [`DeformField::backward_into`].
#[derive(Debug, Clone, Default)]
pub struct BackwardScratch {
    upstream: Vec<f64>,
    dz: Vec<f64>,
    dh: Vec<f64>,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(parameters: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: vec![0.0; parameters],
            v: vec![0.0; parameters],
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::unit_f64;
    use proptest::prelude::*;

    /// Straight-line reimplementation: nested loops over explicit weight indices.
    fn reference_forward(field: &DeformField, p: Point2<f64>) -> [f64; 3] {
        let w = field.width();
        let theta = field.params();
        let mut offset = 0;
        let mut dense = |h: &[f64], out: usize| -> Vec<f64> {
            let inp = h.len();
            let z = (0..out)
                .map(|o| {
                    let mut s = theta[offset + inp * out + o];
                    for (i, x) in h.iter().enumerate() {
                        s += theta[offset + o * inp + i] * x;
                    }
                    s
                })
                .collect();
            offset += (inp + 1) * out;
            z
        };
        let act = |z: Vec<f64>| -> Vec<f64> { z.into_iter().map(|v| if v > 0.0 { v } else { 0.01 * v }).collect() };
        let h1 = act(dense(&[p.x, p.y], w));
        let h2 = act(dense(&h1, w));
        let h3 = act(dense(&h2, w));
        let h4: Vec<f64> = act(dense(&h3, w)).iter().zip(&h3).map(|(a, b)| a + b).collect();
        let h5 = act(dense(&h4, w));
        let h6 = act(dense(&h5, w));
        let h7 = act(dense(&h6, w));
        let out = dense(&h7, 3);
        [out[0], out[1], out[2]]
    }

    fn random_points(n: usize, seed: u64) -> Vec<Point2<f64>> {
        let mut rng = seeded(seed);
        (0..n).map(|_| Point2::new(unit_f64(&mut rng), unit_f64(&mut rng))).collect()
    }

    #[test]
    fn parameter_count_matches_architecture() {
        assert_eq!(DeformField::parameter_count(DEFAULT_WIDTH), 1_579_011);
        for w in [1, 2, 16, 64] {
            let f = DeformField::zeros(w).unwrap();
            assert_eq!(f.params().len(), 6 * w * w + 12 * w + 3);
        }
        assert!(matches!(
            DeformField::from_params(4, vec![0.0; 10]),
            Err(FitError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_network_outputs_origin() {
        let f = DeformField::zeros(16).unwrap();
        for q in f.forward(&random_points(20, 1)).unwrap() {
            assert_eq!(q, Point3::origin());
        }
    }

    #[test]
    fn batch_rows_equal_single_point_evaluation() {
        for w in [16, 64] {
            let f = DeformField::new(w, 3).unwrap();
            let pts = random_points(300, 4);
            let batch = f.forward(&pts).unwrap();
            for (p, q) in pts.iter().zip(&batch) {
                assert_eq!(f.forward_point(*p).unwrap(), *q);
            }
        }
    }

    #[test]
    fn forward_matches_reference_implementation() {
        for seed in 0..5 {
            let f = DeformField::new(32, seed).unwrap();
            let pts = random_points(50, 100 + seed);
            for (p, q) in pts.iter().zip(f.forward(&pts).unwrap()) {
                let r = reference_forward(&f, *p);
                for k in 0..3 {
                    assert!((q[k] - r[k]).abs() <= 1e-6 * r[k].abs().max(1e-12), "{} vs {}", q[k], r[k]);
                }
            }
        }
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let mut f = DeformField::new(8, 0).unwrap();
        f.params_mut()[5] = f64::NAN;
        assert!(matches!(f.forward(&random_points(3, 0)), Err(FitError::NonFiniteParameters)));
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradient() {
        let f = DeformField::new(16, 9).unwrap();
        let cache = f.forward_cached(&random_points(40, 2)).unwrap();
        let g = f.backward(&cache, &vec![Vector3::zeros(); 40]).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
        assert!(matches!(f.backward(&cache, &[Vector3::zeros()]), Err(FitError::ShapeMismatch { .. })));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seeded(77);
        let mut probes = 0;
        let mut draws = 0;
        while probes < 100 {
            draws += 1;
            assert!(draws < 1000, "too many probes hit activation kinks");
            let mut f = DeformField::new(16, 1000 + draws).unwrap();
            let pts = random_points(6, 2000 + draws);
            let weights: Vec<Vector3<f64>> = (0..6)
                .map(|_| Vector3::new(uniform(&mut rng, -1.0, 1.0), uniform(&mut rng, -1.0, 1.0), uniform(&mut rng, -1.0, 1.0)))
                .collect();
            let objective = |f: &DeformField| -> (f64, Vec<bool>) {
                let c = f.forward_cached(&pts).unwrap();
                let val = c.outputs().iter().zip(&weights).map(|(o, w)| o.coords.dot(w)).sum();
                (val, c.activation_pattern())
            };
            let cache = f.forward_cached(&pts).unwrap();
            let grad = f.backward(&cache, &weights).unwrap();
            let k = crate::rng::index(&mut rng, f.params().len());
            let h = 1e-4;
            let base = f.params()[k];
            f.params_mut()[k] = base + h;
            let (plus, pat_plus) = objective(&f);
            f.params_mut()[k] = base - h;
            let (minus, pat_minus) = objective(&f);
            f.params_mut()[k] = base;
            let pattern = cache.activation_pattern();
            if pat_plus != pattern || pat_minus != pattern {
                continue;
            }
            let fd = (plus - minus) / (2.0 * h);
            let scale = grad[k].abs().max(fd.abs()).max(1e-8);
            assert!((grad[k] - fd).abs() / scale < 1e-4, "param {k}: {} vs {fd}", grad[k]);
            probes += 1;
        }
    }

    #[test]
    fn batch_gradient_is_sum_of_per_sample_gradients() {
        let f = DeformField::new(16, 5).unwrap();
        let pts = random_points(64, 6);
        let mut rng = seeded(8);
        let og: Vec<Vector3<f64>> = (0..64)
            .map(|_| Vector3::new(unit_f64(&mut rng), unit_f64(&mut rng), unit_f64(&mut rng)))
            .collect();
        let batch = f.backward(&f.forward_cached(&pts).unwrap(), &og).unwrap();
        let mut sum = vec![0.0; batch.len()];
        for (p, g) in pts.iter().zip(&og) {
            let single = f.backward(&f.forward_cached(&[*p]).unwrap(), &[*g]).unwrap();
            sum.iter_mut().zip(&single).for_each(|(s, x)| *s += x);
        }
        // the batched weight gradient is one fused-multiply-add reduction, so it
        // agrees with the sequential sum up to rounding only
        for (a, b) in batch.iter().zip(&sum) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![1.0, -2.0, 0.5];
        let mut adam = Adam::new(3, 0.1, 0.9, 0.999, 1e-8);
        adam.step(&mut p, &[3.0, -0.5, 0.0]);
        assert!((p[0] - 0.9).abs() < 1e-8);
        assert!((p[1] + 1.9).abs() < 1e-8);
        assert_eq!(p[2], 0.5);
        assert_eq!(adam.steps(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn forward_is_continuous(seed in 0u64..1000, x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let f = DeformField::new(8, seed).unwrap();
            let a = f.forward_point(Point2::new(x, y)).unwrap();
            let b = f.forward_point(Point2::new(x + 1e-9, y - 1e-9)).unwrap();
            prop_assert!((a - b).norm() < 1e-6);
        }
    }
}
