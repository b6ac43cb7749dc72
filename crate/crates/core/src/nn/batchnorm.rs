//! Batch normalisation over the `(N, H, W)` axes of NHWC tensors (or `N` for 2D inputs).

use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Cached values from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Channel count and number of values per channel.
fn layout<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize)> {
    let c = *x
        .shape()
        .last()
        .ok_or_else(|| Error::invalid("batch norm needs a tensor with a channel axis"))?;
    Ok((c, x.len() / c.max(1)))
}

/// Training-mode forward. Returns the output, the batch mean and biased batch variance.
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, BatchNormCache<T>, Vec<T>, Vec<T>)> {
    if x.shape().first().copied().unwrap_or(0) < 2 {
        return Err(Error::invalid("training-mode batch norm needs a batch of at least 2"));
    }
    let (c, count) = layout(x)?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::invalid(format!("batch norm parameters must be [{c}]")));
    }
    let m = T::from_f64(count as f64);
    let mut mean = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc = *acc + *v;
        }
    }
    mean.iter_mut().for_each(|v| *v = *v / m);
    let mut var = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
            let d = *v - *mu;
            *acc = *acc + d * d;
        }
    }
    var.iter_mut().for_each(|v| *v = *v / m);
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();

    let mut x_hat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for ((xr, hr), yr) in x
        .data()
        .chunks_exact(c)
        .zip(x_hat.data_mut().chunks_exact_mut(c))
        .zip(y.data_mut().chunks_exact_mut(c))
    {
        for ch in 0..c {
            let h = (xr[ch] - mean[ch]) * inv_std[ch];
            hr[ch] = h;
            yr[ch] = gamma.data()[ch] * h + beta.data()[ch];
        }
    }
    Ok((y, BatchNormCache { x_hat, inv_std }, mean, var))
}

/// Inference-mode forward with fixed statistics.
pub fn batchnorm_infer<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let (c, _) = layout(x)?;
    if gamma.shape() != [c] || running_mean.shape() != [c] {
        return Err(Error::invalid(format!("batch norm parameters must be [{c}]")));
    }
    let scale: Vec<T> = (0..c)
        .map(|ch| gamma.data()[ch] / (running_var.data()[ch] + eps).sqrt())
        .collect();
    let shift: Vec<T> = (0..c)
        .map(|ch| beta.data()[ch] - running_mean.data()[ch] * scale[ch])
        .collect();
    let mut y = Tensor::zeros(x.shape());
    for (xr, yr) in x.data().chunks_exact(c).zip(y.data_mut().chunks_exact_mut(c)) {
        for ch in 0..c {
            yr[ch] = xr[ch] * scale[ch] + shift[ch];
        }
    }
    Ok(y)
}

/// Backward of the training-mode forward: `(dx, dgamma, dbeta)`.
pub fn batchnorm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    gamma: &Tensor<T>,
    cache: &BatchNormCache<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(Error::invalid("batch norm gradient shape mismatch"));
    }
    let (c, count) = layout(grad_out)?;
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for (gr, hr) in grad_out.data().chunks_exact(c).zip(cache.x_hat.data().chunks_exact(c)) {
        for ch in 0..c {
            dbeta.data_mut()[ch] = dbeta.data()[ch] + gr[ch];
            dgamma.data_mut()[ch] = dgamma.data()[ch] + gr[ch] * hr[ch];
        }
    }
    let m = T::from_f64(count as f64);
    let mut dx = Tensor::zeros(grad_out.shape());
    for ((gr, hr), dr) in grad_out
        .data()
        .chunks_exact(c)
        .zip(cache.x_hat.data().chunks_exact(c))
        .zip(dx.data_mut().chunks_exact_mut(c))
    {
        for ch in 0..c {
            let k = gamma.data()[ch] * cache.inv_std[ch] / m;
            dr[ch] = k * (m * gr[ch] - dbeta.data()[ch] - hr[ch] * dgamma.data()[ch]);
        }
    }
    Ok((dx, dgamma, dbeta))
}
