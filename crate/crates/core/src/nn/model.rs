use rand::Rng;

use super::layers::{Layer, LayerSpec};
use super::ops::softmax;
use super::{Param, Scalar, Tensor};
use crate::{Error, Result};

/// An ordered stack of layers mapping per-sample inputs of `input_shape` to class logits.
#[derive(Debug, Clone)]
pub struct Model<T> {
    architecture: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    num_classes: usize,
}

impl<T: Scalar> Model<T> {
    /// Validates the shape chain; the last layer must produce a flat vector of logits.
    pub fn new(architecture: impl Into<String>, input_shape: &[usize], layers: Vec<Layer<T>>) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::invalid(format!("layer {i} ({:?}): {e}", layer.spec())))?;
        }
        let [num_classes] = shape[..] else {
            return Err(Error::invalid(format!("model must end in a flat output, got {shape:?}")));
        };
        Ok(Self {
            architecture: architecture.into(),
            input_shape: input_shape.to_vec(),
            layers,
            num_classes,
        })
    }

    pub fn from_specs<R: Rng + ?Sized>(
        architecture: impl Into<String>,
        input_shape: &[usize],
        specs: &[LayerSpec],
        rng: &mut R,
    ) -> Result<Self> {
        let layers = specs.iter().map(|s| s.build(rng)).collect::<Result<Vec<_>>>()?;
        Self::new(architecture, input_shape, layers)
    }

    pub fn architecture(&self) -> &str {
        &self.architecture
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec().param_count()).sum()
    }

    pub fn weight_layer_count(&self) -> usize {
        self.layers.iter().map(Layer::weight_layers).sum()
    }

    /// Per-sample output shape after each layer.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        self.layers
            .iter()
            .map(|l| {
                shape = l.output_shape(&shape).expect("validated at construction");
                shape.clone()
            })
            .collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] || x.shape()[0] == 0 {
            return Err(Error::invalid(format!(
                "model expects [N, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Training-mode forward pass returning logits `[N, K]`.
    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(&x)?;
        self.layers.iter_mut().try_fold(x, |h, l| l.forward(h))
    }

    /// Back-propagates `dL/dlogits`, accumulating parameter gradients; returns `dL/dx`.
    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        self.layers.iter_mut().rev().try_fold(grad, |g, l| l.backward(g))
    }

    /// Inference-mode logits; does not mutate any state.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut layers = self.layers.iter();
        let Some(first) = layers.next() else {
            return Ok(x.clone());
        };
        layers.try_fold(first.infer(x)?, |h, l| l.infer(&h))
    }

    /// Class probabilities, one row per sample.
    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Vec<Vec<T>>> {
        let logits = self.infer(x)?;
        Ok(logits.data().chunks_exact(self.num_classes).map(softmax).collect())
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.infer(x)?;
        Ok(logits.data().chunks_exact(self.num_classes).map(argmax).collect())
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for l in &mut self.layers {
            l.visit_params(f);
        }
    }

    /// Parameters and batch-norm running statistics, in declaration order.
    pub fn visit_state(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        for l in &mut self.layers {
            l.visit_state(f);
        }
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}
