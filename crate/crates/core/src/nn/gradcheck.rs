//! Finite-difference verification of the backward passes at f64.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::ops::softmax_crossentropy;
use super::{Layer, LayerSpec, Model, Padding, Scalar, Tensor};
use crate::Result;

/// Largest relative error accepted by [`gradient_suite`].
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

const STEP: f64 = 1e-3;
/// Gradients below this magnitude are compared in absolute terms.
const DENOM_FLOOR: f64 = 1e-6;
const MAX_COORDS_PER_TENSOR: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckedOp {
    Conv2d,
    MaxPool2d,
    BatchNorm,
    Dense,
    Relu,
    Flatten,
    GlobalAvgPool,
    Residual,
    SoftmaxCrossEntropy,
    ResidualModel,
}

impl CheckedOp {
    pub const ALL: [CheckedOp; 10] = [
        CheckedOp::Conv2d,
        CheckedOp::MaxPool2d,
        CheckedOp::BatchNorm,
        CheckedOp::Dense,
        CheckedOp::Relu,
        CheckedOp::Flatten,
        CheckedOp::GlobalAvgPool,
        CheckedOp::Residual,
        CheckedOp::SoftmaxCrossEntropy,
        CheckedOp::ResidualModel,
    ];
}

impl fmt::Display for CheckedOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Outcome of comparing analytic and numerical gradients.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a perturbation flipped a ReLU or pooling decision.
    pub skipped_kinks: usize,
}

impl GradCheck {
    fn merge(&mut self, other: GradCheck) {
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
        self.max_rel_error = self.max_rel_error.max((analytic - numeric).abs() / denom);
        self.checked += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpSummary {
    pub op: CheckedOp,
    pub instances: usize,
    pub result: GradCheck,
}

impl OpSummary {
    pub fn passed(&self) -> bool {
        self.result.checked > 0 && self.result.max_rel_error < GRADCHECK_TOLERANCE
    }
}

/// Something with a scalar objective whose gradient can be probed coordinate by coordinate.
trait Probe: Clone {
    /// Objective and the decision signature of the pass that produced it.
    fn eval(&self) -> Result<(f64, Vec<usize>)>;
    /// Adds `delta` to element `index` of tensor `tensor` (0 is the input, then parameters in order).
    fn perturb(&mut self, tensor: usize, index: usize, delta: f64);
}

fn perturb_param(visit: impl FnOnce(&mut dyn FnMut(&mut super::Param<f64>)), tensor: usize, index: usize, delta: f64) {
    let mut k = 0;
    visit(&mut |p| {
        k += 1;
        if k == tensor {
            p.value.data_mut()[index] += delta;
        }
    });
}

/// Central differences with Richardson extrapolation, skipping coordinates where a
/// perturbation changes a piecewise-linear decision.
fn compare<P: Probe>(base: &P, analytic: &[Tensor<f64>], rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let (_, sig0) = base.eval()?;
    let mut out = GradCheck::default();
    for (t, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let coords: Vec<usize> = if n <= MAX_COORDS_PER_TENSOR {
            (0..n).collect()
        } else {
            rand::seq::index::sample(rng, n, MAX_COORDS_PER_TENSOR).into_vec()
        };
        'coord: for i in coords {
            let at = |delta: f64| -> Result<(f64, Vec<usize>)> {
                let mut p = base.clone();
                p.perturb(t, i, delta);
                p.eval()
            };
            let mut vals = [0.0; 4];
            for (v, d) in vals.iter_mut().zip([STEP, -STEP, STEP / 2.0, -STEP / 2.0]) {
                let (f, sig) = at(d)?;
                if sig != sig0 {
                    out.skipped_kinks += 1;
                    continue 'coord;
                }
                *v = f;
            }
            let wide = (vals[0] - vals[1]) / (2.0 * STEP);
            let narrow = (vals[2] - vals[3]) / STEP;
            out.record(grad.data()[i], (4.0 * narrow - wide) / 3.0);
        }
    }
    Ok(out)
}

#[derive(Clone)]
struct LayerProbe {
    layer: Layer<f64>,
    x: Tensor<f64>,
    weights: Tensor<f64>,
}

impl Probe for LayerProbe {
    fn eval(&self) -> Result<(f64, Vec<usize>)> {
        let mut layer = self.layer.clone();
        let y = layer.forward(self.x.clone())?;
        let mut sig = Vec::new();
        layer.decision_signature(&mut sig);
        Ok((y.data().iter().zip(self.weights.data()).map(|(a, b)| a * b).sum(), sig))
    }

    fn perturb(&mut self, tensor: usize, index: usize, delta: f64) {
        match tensor {
            0 => self.x.data_mut()[index] += delta,
            t => perturb_param(|f| self.layer.visit_params(f), t, index, delta),
        }
    }
}

/// Checks `dL/dx` and all parameter gradients of one layer for `L = sum(w * layer(x))`
/// with random weights `w`.
pub fn check_layer(layer: &Layer<f64>, x: &Tensor<f64>, rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let mut probe_layer = layer.clone();
    let y = probe_layer.forward(x.clone())?;
    let weights = Tensor::randn(y.shape(), 1.0, rng);
    let mut l = layer.clone();
    l.visit_params(&mut |p| p.zero_grad());
    l.forward(x.clone())?;
    let dx = l.backward(weights.clone())?;
    let mut analytic = vec![dx];
    l.visit_params(&mut |p| analytic.push(p.grad.clone()));
    let probe = LayerProbe {
        layer: layer.clone(),
        x: x.clone(),
        weights,
    };
    compare(&probe, &analytic, rng)
}

#[derive(Clone)]
struct ModelProbe {
    model: Model<f64>,
    x: Tensor<f64>,
    labels: Vec<usize>,
}

impl Probe for ModelProbe {
    fn eval(&self) -> Result<(f64, Vec<usize>)> {
        let mut m = self.model.clone();
        let logits = m.forward(self.x.clone())?;
        let mut sig = Vec::new();
        for l in m.layers() {
            l.decision_signature(&mut sig);
        }
        Ok((softmax_crossentropy(&logits, &self.labels)?.0, sig))
    }

    fn perturb(&mut self, tensor: usize, index: usize, delta: f64) {
        match tensor {
            0 => self.x.data_mut()[index] += delta,
            t => perturb_param(|f| self.model.visit_params(f), t, index, delta),
        }
    }
}

/// Checks the full model gradient of the mean cross-entropy loss.
pub fn check_model(model: &Model<f64>, x: &Tensor<f64>, labels: &[usize], rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let mut m = model.clone();
    m.zero_grad();
    let logits = m.forward(x.clone())?;
    let (_, grad) = softmax_crossentropy(&logits, labels)?;
    let dx = m.backward(grad)?;
    let mut analytic = vec![dx];
    m.visit_params(&mut |p| analytic.push(p.grad.clone()));
    let probe = ModelProbe {
        model: model.clone(),
        x: x.clone(),
        labels: labels.to_vec(),
    };
    compare(&probe, &analytic, rng)
}

#[derive(Clone)]
struct LossProbe {
    logits: Tensor<f64>,
    labels: Vec<usize>,
}

impl Probe for LossProbe {
    fn eval(&self) -> Result<(f64, Vec<usize>)> {
        Ok((softmax_crossentropy(&self.logits, &self.labels)?.0, Vec::new()))
    }

    fn perturb(&mut self, _tensor: usize, index: usize, delta: f64) {
        self.logits.data_mut()[index] += delta;
    }
}

pub fn check_softmax_crossentropy(logits: &Tensor<f64>, labels: &[usize], rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let (_, grad) = softmax_crossentropy(logits, labels)?;
    let probe = LossProbe {
        logits: logits.clone(),
        labels: labels.to_vec(),
    };
    compare(&probe, &[grad], rng)
}

/// Moves parameters away from their initial values so biases and BN affine terms are exercised.
fn jitter_params<T: Scalar>(layer: &mut Layer<T>, rng: &mut ChaCha8Rng) {
    layer.visit_params(&mut |p| {
        for v in p.value.data_mut() {
            *v = *v + T::from_f64(0.3 * rng.sample::<f64, _>(StandardNormal));
        }
    });
}

fn image(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, c: usize) -> Tensor<f64> {
    Tensor::randn(&[n, h, w, c], 1.0, rng)
}

/// Runs one randomly shaped instance of `op`.
pub fn check_random_instance(op: CheckedOp, rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let (n, h, w, c) = (
        rng.random_range(1..=2),
        rng.random_range(2..=6),
        rng.random_range(2..=6),
        rng.random_range(1..=3),
    );
    match op {
        CheckedOp::Conv2d => {
            let k = if rng.random_bool(0.5) { 3 } else { 1 };
            let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
            let (h, w) = (h.max(k), w.max(k));
            let spec = LayerSpec::Conv2d {
                kernel: k,
                c_in: c,
                c_out: rng.random_range(1..=4),
                stride: rng.random_range(1..=2),
                padding,
                bias: rng.random_bool(0.7),
            };
            let mut layer = spec.build(rng)?;
            jitter_params(&mut layer, rng);
            let x = image(rng, n, h, w, c);
            check_layer(&layer, &x, rng)
        }
        CheckedOp::MaxPool2d => {
            let x = image(rng, n, h, w, c);
            check_layer(&Layer::maxpool(), &x, rng)
        }
        CheckedOp::BatchNorm => {
            let n = n + 1;
            let mut layer = LayerSpec::BatchNorm {
                channels: c,
                momentum: 0.1,
                eps: 1e-5,
            }
            .build(rng)?;
            jitter_params(&mut layer, rng);
            let x = if rng.random_bool(0.5) {
                image(rng, n, h.min(3), w.min(3), c)
            } else {
                Tensor::randn(&[n + 1, c], 1.0, rng)
            };
            check_layer(&layer, &x, rng)
        }
        CheckedOp::Dense => {
            let (d_in, d_out) = (rng.random_range(1..=8), rng.random_range(1..=6));
            let mut layer = LayerSpec::Dense { d_in, d_out }.build(rng)?;
            jitter_params(&mut layer, rng);
            let x = Tensor::randn(&[n + 1, d_in], 1.0, rng);
            check_layer(&layer, &x, rng)
        }
        CheckedOp::Relu => {
            let mut x = image(rng, n, h, w, c);
            // keep inputs clear of the kink so every coordinate is checked
            for v in x.data_mut() {
                *v += 0.05 * v.signum();
            }
            check_layer(&Layer::relu(), &x, rng)
        }
        CheckedOp::Flatten => check_layer(&Layer::flatten(), &image(rng, n, h, w, c), rng),
        CheckedOp::GlobalAvgPool => check_layer(&Layer::global_avg_pool(), &image(rng, n, h, w, c), rng),
        CheckedOp::Residual => {
            let stride = rng.random_range(1..=2);
            let c_out = if stride == 2 { c + rng.random_range(0..=2) } else { c };
            let mut layer = LayerSpec::Residual { c_in: c, c_out, stride }.build(rng)?;
            jitter_params(&mut layer, rng);
            let x = image(rng, n + 1, h.min(4), w.min(4), c);
            check_layer(&layer, &x, rng)
        }
        CheckedOp::SoftmaxCrossEntropy => {
            let k = rng.random_range(2..=6);
            let rows = rng.random_range(1..=4);
            let logits = Tensor::randn(&[rows, k], 2.0, rng);
            let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..k)).collect();
            check_softmax_crossentropy(&logits, &labels, rng)
        }
        CheckedOp::ResidualModel => {
            let stride = rng.random_range(1..=2);
            let c_out = c + if stride == 2 { 1 } else { 0 };
            let specs = [
                LayerSpec::Residual { c_in: c, c_out, stride },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { d_in: c_out, d_out: 4 },
            ];
            let (h, w) = (h.min(4), w.min(4));
            let mut model = Model::from_specs("check", &[h, w, c], &specs, rng)?;
            let mut layers: Vec<Layer<f64>> = model.layers().to_vec();
            for l in &mut layers {
                jitter_params(l, rng);
            }
            model = Model::new("check", &[h, w, c], layers)?;
            let x = image(rng, n + 1, h, w, c);
            let labels: Vec<usize> = (0..n + 1).map(|_| rng.random_range(0..4)).collect();
            check_model(&model, &x, &labels, rng)
        }
    }
}

/// Checks `instances` random shapes of every differentiable operation.
pub fn gradient_suite(instances: usize, seed: u64) -> Result<Vec<OpSummary>> {
    CheckedOp::ALL
        .iter()
        .enumerate()
        .map(|(k, &op)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64 + 1) << 32));
            let mut result = GradCheck::default();
            for _ in 0..instances {
                result.merge(check_random_instance(op, &mut rng)?);
            }
            Ok(OpSummary { op, instances, result })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_passes_on_random_shapes() {
        for s in gradient_suite(20, 7).unwrap() {
            assert!(s.passed(), "{} failed: {:?}", s.op, s.result);
            assert!(s.result.skipped_kinks * 10 <= s.result.checked, "{}: {:?}", s.op, s.result);
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // a deliberately broken analytic gradient must be caught
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let (_, mut grad) = softmax_crossentropy(&logits, &[0, 2]).unwrap();
        grad.data_mut()[1] *= 1.001;
        let probe = LossProbe {
            logits,
            labels: vec![0, 2],
        };
        let r = compare(&probe, &[grad], &mut rng).unwrap();
        assert!(r.max_rel_error > 1e-4);
    }
}
