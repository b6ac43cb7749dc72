use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batchnorm::{batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNormCache};
use super::conv::{conv2d_backward, conv2d_forward, ConvGeometry, Padding};
use super::ops::{
    dense_backward, dense_forward, global_avg_pool_backward, global_avg_pool_forward, relu_backward, relu_forward,
};
use super::pool::{maxpool2d_backward, maxpool2d_forward};
use super::{Param, Scalar, Tensor};
use crate::{Error, Result};

/// Serializable description of a layer, used in checkpoint headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        kernel: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        padding: Padding,
        #[serde(default = "default_true")]
        bias: bool,
    },
    MaxPool2d,
    BatchNorm {
        channels: usize,
        momentum: f64,
        eps: f64,
    },
    Dense {
        d_in: usize,
        d_out: usize,
    },
    Relu,
    Flatten,
    GlobalAvgPool,
    Residual {
        c_in: usize,
        c_out: usize,
        stride: usize,
    },
}

impl LayerSpec {
    /// Number of trainable scalars for this layer.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                kernel, c_in, c_out, bias, ..
            } => kernel * kernel * c_in * c_out + if bias { c_out } else { 0 },
            LayerSpec::BatchNorm { channels, .. } => 2 * channels,
            LayerSpec::Dense { d_in, d_out } => d_in * d_out + d_out,
            LayerSpec::Residual { c_in, c_out, stride } => {
                let main = 9 * c_in * c_out + 9 * c_out * c_out + 4 * c_out;
                let projection = if stride != 1 || c_in != c_out { c_in * c_out + 2 * c_out } else { 0 };
                main + projection
            }
            LayerSpec::MaxPool2d | LayerSpec::Relu | LayerSpec::Flatten | LayerSpec::GlobalAvgPool => 0,
        }
    }

    /// Builds a freshly initialised layer.
    pub fn build<T: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Layer<T>> {
        let positive = |v: &[usize]| v.iter().all(|&x| x > 0);
        Ok(match *self {
            LayerSpec::Conv2d {
                kernel,
                c_in,
                c_out,
                stride,
                padding,
                bias,
            } => {
                if !positive(&[kernel, c_in, c_out, stride]) {
                    return Err(Error::invalid("convolution dimensions must be positive"));
                }
                Layer::Conv2d(Conv2d::new(kernel, c_in, c_out, stride, padding, bias, rng))
            }
            LayerSpec::MaxPool2d => Layer::maxpool(),
            LayerSpec::BatchNorm { channels, momentum, eps } => {
                if channels == 0 || !(0.0..=1.0).contains(&momentum) || !(eps > 0.0) {
                    return Err(Error::invalid("invalid batch norm hyperparameters"));
                }
                let mut bn = BatchNorm::new(channels);
                bn.momentum = momentum;
                bn.eps = eps;
                Layer::BatchNorm(bn)
            }
            LayerSpec::Dense { d_in, d_out } => {
                if !positive(&[d_in, d_out]) {
                    return Err(Error::invalid("dense dimensions must be positive"));
                }
                Layer::Dense(Dense::new(d_in, d_out, rng))
            }
            LayerSpec::Relu => Layer::relu(),
            LayerSpec::Flatten => Layer::flatten(),
            LayerSpec::GlobalAvgPool => Layer::global_avg_pool(),
            LayerSpec::Residual { c_in, c_out, stride } => {
                if !positive(&[c_in, c_out, stride]) {
                    return Err(Error::invalid("residual dimensions must be positive"));
                }
                Layer::Residual(Box::new(ResidualBlock::new(c_in, c_out, stride, rng)))
            }
        })
    }
}

fn default_true() -> bool {
    true
}

fn missing_cache() -> Error {
    Error::invalid("backward called without a preceding training forward pass")
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub kernel: Param<T>,
    /// Omitted when a batch norm follows and would cancel it.
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub padding: Padding,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    /// He-normal initialised `k x k` convolution.
    pub fn new<R: Rng + ?Sized>(
        k: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        padding: Padding,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / (k * k * c_in) as f64).sqrt();
        Self {
            kernel: Param::new(Tensor::randn(&[k, k, c_in, c_out], std, rng)),
            bias: bias.then(|| Param::new(Tensor::zeros(&[c_out]))),
            stride,
            padding,
            input: None,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.kernel.value.shape();
        (s[0], s[2], s[3])
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.bias {
            Some(b) => conv2d_forward(x, &self.kernel.value, &b.value, self.stride, self.padding),
            None => conv2d_forward(x, &self.kernel.value, &Tensor::zeros(&[self.dims().2]), self.stride, self.padding),
        }
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(&x)?;
        self.input = Some(x);
        Ok(y)
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(missing_cache)?;
        let g = conv2d_backward(&x, &self.kernel.value, &grad, self.stride, self.padding)?;
        self.kernel.grad.add_assign(&g.dw)?;
        if let Some(b) = &mut self.bias {
            b.grad.add_assign(&g.db)?;
        }
        Ok(g.dx)
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (k, c_in, c_out) = self.dims();
        let [h, w, c] = input[..] else {
            return Err(Error::invalid(format!("convolution expects [H, W, C], got {input:?}")));
        };
        if c != c_in {
            return Err(Error::invalid(format!("convolution expects {c_in} channels, got {c}")));
        }
        let g = ConvGeometry::new((h, w, c), (k, k, c_out), self.stride, self.padding)?;
        Ok(vec![g.out_h, g.out_w, c_out])
    }

    fn spec(&self) -> LayerSpec {
        let (kernel, c_in, c_out) = self.dims();
        LayerSpec::Conv2d {
            kernel,
            c_in,
            c_out,
            stride: self.stride,
            padding: self.padding,
            bias: self.bias.is_some(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Weight of the newest batch statistics in the running averages.
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::filled(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        batchnorm_infer(
            x,
            &self.gamma.value,
            &self.beta.value,
            &self.running_mean,
            &self.running_var,
            T::from_f64(self.eps),
        )
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let (y, cache, mean, var) = batchnorm_train(&x, &self.gamma.value, &self.beta.value, T::from_f64(self.eps))?;
        let count = x.len() / mean.len().max(1);
        let unbias = T::from_f64(count as f64 / (count as f64 - 1.0).max(1.0));
        let mom = T::from_f64(self.momentum);
        let keep = T::one() - mom;
        for (r, m) in self.running_mean.data_mut().iter_mut().zip(&mean) {
            *r = keep * *r + mom * *m;
        }
        for (r, v) in self.running_var.data_mut().iter_mut().zip(&var) {
            *r = keep * *r + mom * *v * unbias;
        }
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(missing_cache)?;
        let (dx, dgamma, dbeta) = batchnorm_backward(&grad, &self.gamma.value, &cache)?;
        self.gamma.grad.add_assign(&dgamma)?;
        self.beta.grad.add_assign(&dbeta)?;
        Ok(dx)
    }

    fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let std = (2.0 / d_in as f64).sqrt();
        Self {
            weight: Param::new(Tensor::randn(&[d_in, d_out], std, rng)),
            bias: Param::new(Tensor::zeros(&[d_out])),
            input: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        dense_forward(x, &self.weight.value, &self.bias.value)
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(&x)?;
        self.input = Some(x);
        Ok(y)
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(missing_cache)?;
        let (dx, dw, db) = dense_backward(&x, &self.weight.value, &grad)?;
        self.weight.grad.add_assign(&dw)?;
        self.bias.grad.add_assign(&db)?;
        Ok(dx)
    }
}

/// Two 3x3 conv + batch-norm stages with a ReLU between, added to an identity
/// or 1x1-projection shortcut, then a final ReLU.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm<T>,
    /// Present when the block changes resolution or width.
    pub projection: Option<(Conv2d<T>, BatchNorm<T>)>,
    relu_inner: Option<Vec<bool>>,
    relu_out: Option<Vec<bool>>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, stride: usize, rng: &mut R) -> Self {
        let projection = (stride != 1 || c_in != c_out)
            .then(|| (Conv2d::new(1, c_in, c_out, stride, Padding::Same, false, rng), BatchNorm::new(c_out)));
        Self {
            conv1: Conv2d::new(3, c_in, c_out, stride, Padding::Same, false, rng),
            bn1: BatchNorm::new(c_out),
            conv2: Conv2d::new(3, c_out, c_out, 1, Padding::Same, false, rng),
            bn2: BatchNorm::new(c_out),
            projection,
            relu_inner: None,
            relu_out: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.bn1.infer(&self.conv1.infer(x)?)?;
        relu_forward(&mut h);
        let mut h = self.bn2.infer(&self.conv2.infer(&h)?)?;
        match &self.projection {
            Some((conv, bn)) => h.add_assign(&bn.infer(&conv.infer(x)?)?)?,
            None => h.add_assign(x)?,
        }
        relu_forward(&mut h);
        Ok(h)
    }

    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        let shortcut = match &mut self.projection {
            Some((conv, bn)) => bn.forward(conv.forward(x.clone())?)?,
            None => x.clone(),
        };
        let mut h = self.bn1.forward(self.conv1.forward(x)?)?;
        self.relu_inner = Some(relu_forward(&mut h));
        let mut h = self.bn2.forward(self.conv2.forward(h)?)?;
        h.add_assign(&shortcut)?;
        self.relu_out = Some(relu_forward(&mut h));
        Ok(h)
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        let g = relu_backward(grad, &self.relu_out.take().ok_or_else(missing_cache)?);
        let g_short = match &mut self.projection {
            Some((conv, bn)) => conv.backward(bn.backward(g.clone())?)?,
            None => g.clone(),
        };
        let h = self.conv2.backward(self.bn2.backward(g)?)?;
        let h = relu_backward(h, &self.relu_inner.take().ok_or_else(missing_cache)?);
        let mut dx = self.conv1.backward(self.bn1.backward(h)?)?;
        dx.add_assign(&g_short)?;
        Ok(dx)
    }
}

/// One network layer. Image tensors are NHWC.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    MaxPool2d { cache: Option<(Vec<usize>, Vec<usize>)> },
    BatchNorm(BatchNorm<T>),
    Dense(Dense<T>),
    Relu { mask: Option<Vec<bool>> },
    Flatten { input_shape: Option<Vec<usize>> },
    GlobalAvgPool { input_shape: Option<Vec<usize>> },
    Residual(Box<ResidualBlock<T>>),
}

impl<T: Scalar> Layer<T> {
    pub fn relu() -> Self {
        Layer::Relu { mask: None }
    }

    pub fn maxpool() -> Self {
        Layer::MaxPool2d { cache: None }
    }

    pub fn flatten() -> Self {
        Layer::Flatten { input_shape: None }
    }

    pub fn global_avg_pool() -> Self {
        Layer::GlobalAvgPool { input_shape: None }
    }

    /// Inference-mode forward pass; never mutates the layer.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.infer(x),
            Layer::MaxPool2d { .. } => Ok(maxpool2d_forward(x)?.output),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::Dense(l) => l.infer(x),
            Layer::Relu { .. } => {
                let mut y = x.clone();
                relu_forward(&mut y);
                Ok(y)
            }
            Layer::Flatten { .. } => {
                let n = x.shape()[0];
                x.clone().reshape(&[n, x.len() / n.max(1)])
            }
            Layer::GlobalAvgPool { .. } => global_avg_pool_forward(x),
            Layer::Residual(b) => b.infer(x),
        }
    }

    /// Training-mode forward pass; caches what the backward pass needs.
    pub fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.forward(x),
            Layer::MaxPool2d { cache } => {
                let out = maxpool2d_forward(&x)?;
                *cache = Some((x.shape().to_vec(), out.argmax));
                Ok(out.output)
            }
            Layer::BatchNorm(l) => l.forward(x),
            Layer::Dense(l) => l.forward(x),
            Layer::Relu { mask } => {
                let mut y = x;
                *mask = Some(relu_forward(&mut y));
                Ok(y)
            }
            Layer::Flatten { input_shape } => {
                *input_shape = Some(x.shape().to_vec());
                let n = x.shape()[0];
                let len = x.len();
                x.reshape(&[n, len / n.max(1)])
            }
            Layer::GlobalAvgPool { input_shape } => {
                *input_shape = Some(x.shape().to_vec());
                global_avg_pool_forward(&x)
            }
            Layer::Residual(b) => b.forward(x),
        }
    }

    pub fn backward(&mut self, grad: Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.backward(grad),
            Layer::MaxPool2d { cache } => {
                let (shape, argmax) = cache.take().ok_or_else(missing_cache)?;
                Ok(maxpool2d_backward(&shape, &argmax, &grad))
            }
            Layer::BatchNorm(l) => l.backward(grad),
            Layer::Dense(l) => l.backward(grad),
            Layer::Relu { mask } => Ok(relu_backward(grad, &mask.take().ok_or_else(missing_cache)?)),
            Layer::Flatten { input_shape } => grad.reshape(&input_shape.take().ok_or_else(missing_cache)?),
            Layer::GlobalAvgPool { input_shape } => Ok(global_avg_pool_backward(
                &input_shape.take().ok_or_else(missing_cache)?,
                &grad,
            )),
            Layer::Residual(b) => b.backward(grad),
        }
    }

    /// Visits trainable parameters in declaration order.
    pub fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            Layer::Conv2d(l) => {
                f(&mut l.kernel);
                if let Some(b) = &mut l.bias {
                    f(b);
                }
            }
            Layer::BatchNorm(l) => {
                f(&mut l.gamma);
                f(&mut l.beta);
            }
            Layer::Dense(l) => {
                f(&mut l.weight);
                f(&mut l.bias);
            }
            Layer::Residual(b) => {
                for mut l in b.layers_mut() {
                    l.visit_params(f);
                }
            }
            _ => {}
        }
    }

    /// Visits every persisted tensor (parameters and batch-norm running statistics) in declaration order.
    pub fn visit_state(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        match self {
            Layer::BatchNorm(l) => {
                f(&mut l.gamma.value);
                f(&mut l.beta.value);
                f(&mut l.running_mean);
                f(&mut l.running_var);
            }
            Layer::Residual(b) => {
                for mut l in b.layers_mut() {
                    l.visit_state(f);
                }
            }
            other => other.visit_params(&mut |p| f(&mut p.value)),
        }
    }

    /// Appends the piecewise-linear branch decisions (ReLU masks, pooling winners) made by
    /// the last training forward pass; equal signatures mean no kink was crossed.
    pub fn decision_signature(&self, out: &mut Vec<usize>) {
        fn mask(m: &Option<Vec<bool>>, out: &mut Vec<usize>) {
            if let Some(m) = m {
                out.push(m.len());
                out.extend(m.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i));
            }
        }
        match self {
            Layer::Relu { mask: m } => mask(m, out),
            Layer::MaxPool2d { cache: Some((_, argmax)) } => out.extend_from_slice(argmax),
            Layer::Residual(b) => {
                mask(&b.relu_inner, out);
                mask(&b.relu_out, out);
            }
            _ => {}
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(l) => l.output_shape(input),
            Layer::MaxPool2d { .. } => match input {
                [h, w, c] => Ok(vec![h.div_ceil(2), w.div_ceil(2), *c]),
                _ => Err(Error::invalid("max pool expects [H, W, C]")),
            },
            Layer::BatchNorm(l) => {
                if input.last() != Some(&l.channels()) {
                    return Err(Error::invalid(format!("batch norm expects {} channels", l.channels())));
                }
                Ok(input.to_vec())
            }
            Layer::Dense(l) => {
                let [d_in, d_out] = l.weight.value.shape()[..] else { unreachable!() };
                if input != [d_in] {
                    return Err(Error::invalid(format!("dense expects [{d_in}], got {input:?}")));
                }
                Ok(vec![d_out])
            }
            Layer::Relu { .. } => Ok(input.to_vec()),
            Layer::Flatten { .. } => Ok(vec![input.iter().product()]),
            Layer::GlobalAvgPool { .. } => match input {
                [_, _, c] => Ok(vec![*c]),
                _ => Err(Error::invalid("global pooling expects [H, W, C]")),
            },
            Layer::Residual(b) => {
                let inner = b.conv2.output_shape(&b.conv1.output_shape(input)?)?;
                if let Some((conv, _)) = &b.projection {
                    if conv.output_shape(input)? != inner {
                        return Err(Error::invalid("residual branch and shortcut shapes differ"));
                    }
                } else if inner != input {
                    return Err(Error::invalid("identity shortcut needs matching shapes"));
                }
                Ok(inner)
            }
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d(l) => l.spec(),
            Layer::MaxPool2d { .. } => LayerSpec::MaxPool2d,
            Layer::BatchNorm(l) => LayerSpec::BatchNorm {
                channels: l.channels(),
                momentum: l.momentum,
                eps: l.eps,
            },
            Layer::Dense(l) => {
                let [d_in, d_out] = l.weight.value.shape()[..] else { unreachable!() };
                LayerSpec::Dense { d_in, d_out }
            }
            Layer::Relu { .. } => LayerSpec::Relu,
            Layer::Flatten { .. } => LayerSpec::Flatten,
            Layer::GlobalAvgPool { .. } => LayerSpec::GlobalAvgPool,
            Layer::Residual(b) => {
                let (_, c_in, c_out) = b.conv1.dims();
                LayerSpec::Residual {
                    c_in,
                    c_out,
                    stride: b.conv1.stride,
                }
            }
        }
    }

    /// Convolution and dense layers on the main path; projection shortcuts are not counted.
    pub fn weight_layers(&self) -> usize {
        match self {
            Layer::Conv2d(_) | Layer::Dense(_) => 1,
            Layer::Residual(_) => 2,
            _ => 0,
        }
    }
}

impl<T: Scalar> ResidualBlock<T> {
    /// The block's sub-layers as standalone layers, for uniform parameter traversal.
    fn layers_mut(&mut self) -> Vec<LayerRef<'_, T>> {
        let mut out = vec![
            LayerRef::Conv(&mut self.conv1),
            LayerRef::Bn(&mut self.bn1),
            LayerRef::Conv(&mut self.conv2),
            LayerRef::Bn(&mut self.bn2),
        ];
        if let Some((conv, bn)) = &mut self.projection {
            out.push(LayerRef::Conv(conv));
            out.push(LayerRef::Bn(bn));
        }
        out
    }
}

enum LayerRef<'a, T> {
    Conv(&'a mut Conv2d<T>),
    Bn(&'a mut BatchNorm<T>),
}

impl<T: Scalar> LayerRef<'_, T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            LayerRef::Conv(c) => {
                f(&mut c.kernel);
                if let Some(b) = &mut c.bias {
                    f(b);
                }
            }
            LayerRef::Bn(b) => {
                f(&mut b.gamma);
                f(&mut b.beta);
            }
        }
    }

    fn visit_state(&mut self, f: &mut dyn FnMut(&mut Tensor<T>)) {
        match self {
            LayerRef::Conv(c) => {
                f(&mut c.kernel.value);
                if let Some(b) = &mut c.bias {
                    f(&mut b.value);
                }
            }
            LayerRef::Bn(b) => {
                f(&mut b.gamma.value);
                f(&mut b.beta.value);
                f(&mut b.running_mean);
                f(&mut b.running_var);
            }
        }
    }
}
