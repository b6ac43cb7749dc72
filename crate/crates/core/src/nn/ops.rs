use super::{Scalar, Tensor};
use crate::{Error, Result};

/// `y = x W + b` for `x: [N, in]`, `W: [in, out]`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d_in, d_out) = dense_dims(x, w)?;
    if b.shape() != [d_out] {
        return Err(Error::invalid(format!("dense bias must be [{d_out}]")));
    }
    let mut y = Tensor::zeros(&[n, d_out]);
    for row in y.data_mut().chunks_exact_mut(d_out) {
        row.copy_from_slice(b.data());
    }
    T::gemm(
        n,
        d_in,
        d_out,
        T::one(),
        x.data(),
        d_in as isize,
        1,
        w.data(),
        d_out as isize,
        1,
        T::one(),
        y.data_mut(),
        d_out as isize,
        1,
    );
    Ok(y)
}

fn dense_dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let ([n, d_in], [w_in, d_out]) = (x.shape(), w.shape()) else {
        return Err(Error::invalid(format!(
            "dense expects [N, in] x [in, out], got {:?} x {:?}",
            x.shape(),
            w.shape()
        )));
    };
    if d_in != w_in {
        return Err(Error::invalid(format!("dense input has {d_in} features, weight expects {w_in}")));
    }
    Ok((*n, *d_in, *d_out))
}

/// `(dx, dW, db)` for [`dense_forward`].
pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d_in, d_out) = dense_dims(x, w)?;
    if grad_out.shape() != [n, d_out] {
        return Err(Error::invalid("dense gradient shape mismatch"));
    }
    let mut dx = Tensor::zeros(&[n, d_in]);
    let mut dw = Tensor::zeros(&[d_in, d_out]);
    let mut db = Tensor::zeros(&[d_out]);
    for row in grad_out.data().chunks_exact(d_out) {
        for (acc, g) in db.data_mut().iter_mut().zip(row) {
            *acc = *acc + *g;
        }
    }
    T::gemm(
        d_in,
        n,
        d_out,
        T::one(),
        x.data(),
        1,
        d_in as isize,
        grad_out.data(),
        d_out as isize,
        1,
        T::zero(),
        dw.data_mut(),
        d_out as isize,
        1,
    );
    T::gemm(
        n,
        d_out,
        d_in,
        T::one(),
        grad_out.data(),
        d_out as isize,
        1,
        w.data(),
        1,
        d_out as isize,
        T::zero(),
        dx.data_mut(),
        d_in as isize,
        1,
    );
    Ok((dx, dw, db))
}

/// In-place ReLU; returns the mask of positive inputs.
pub fn relu_forward<T: Scalar>(x: &mut Tensor<T>) -> Vec<bool> {
    x.data_mut()
        .iter_mut()
        .map(|v| {
            let on = *v > T::zero();
            if !on {
                *v = T::zero();
            }
            on
        })
        .collect()
}

pub fn relu_backward<T: Scalar>(mut grad: Tensor<T>, mask: &[bool]) -> Tensor<T> {
    grad.data_mut()
        .iter_mut()
        .zip(mask)
        .filter(|(_, &on)| !on)
        .for_each(|(g, _)| *g = T::zero());
    grad
}

/// Mean over `H, W` of an NHWC tensor, giving `[N, C]`.
pub fn global_avg_pool_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w, c) = x.nhwc()?;
    let scale = T::from_f64(1.0 / (h * w) as f64);
    let mut y = Tensor::zeros(&[n, c]);
    for s in 0..n {
        let out = &mut y.data_mut()[s * c..(s + 1) * c];
        for row in x.data()[s * h * w * c..(s + 1) * h * w * c].chunks_exact(c) {
            for (acc, v) in out.iter_mut().zip(row) {
                *acc = *acc + *v;
            }
        }
        out.iter_mut().for_each(|v| *v = *v * scale);
    }
    Ok(y)
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let (h, w, c) = (input_shape[1], input_shape[2], input_shape[3]);
    let scale = T::from_f64(1.0 / (h * w) as f64);
    let mut dx = Tensor::zeros(input_shape);
    for (s, g) in grad_out.data().chunks_exact(c).enumerate() {
        for row in dx.data_mut()[s * h * w * c..(s + 1) * h * w * c].chunks_exact_mut(c) {
            for (d, v) in row.iter_mut().zip(g) {
                *d = *v * scale;
            }
        }
    }
    dx
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean cross-entropy over a `[N, K]` batch and its gradient `(softmax - onehot) / N`.
pub fn softmax_crossentropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let [n, k] = logits.shape()[..] else {
        return Err(Error::invalid("logits must be [N, K]"));
    };
    if labels.len() != n || n == 0 {
        return Err(Error::invalid(format!("{} labels for a batch of {n}", labels.len())));
    }
    let mut grad = Tensor::zeros(&[n, k]);
    let mut loss = T::zero();
    let inv_n = T::from_f64(1.0 / n as f64);
    for (s, (&label, row)) in labels.iter().zip(logits.data().chunks_exact(k)).enumerate() {
        if label >= k {
            return Err(Error::invalid(format!("label {label} out of range for {k} classes")));
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let log_total = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
        loss = loss + (log_total - (row[label] - max)) * inv_n;
        let g = &mut grad.data_mut()[s * k..(s + 1) * k];
        for (j, (gj, &z)) in g.iter_mut().zip(row).enumerate() {
            let p = (z - max - log_total).exp();
            let target = if j == label { T::one() } else { T::zero() };
            *gj = (p - target) * inv_n;
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln4() {
        let logits = Tensor::<f64>::zeros(&[1, 4]);
        let (loss, grad) = softmax_crossentropy(&logits, &[2]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert_eq!(grad.data(), &[0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn softmax_sums_to_one_under_large_margins() {
        for logits in [[1e4f32, -1e4, 0.0, 3.0], [0.1, 0.2, 0.3, 0.4], [-50.0, -50.0, -50.0, 80.0]] {
            let p = softmax(&logits);
            assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
        let (loss, _) = softmax_crossentropy(&Tensor::<f32>::from_vec(&[1, 4], vec![1e4, -1e4, 0.0, 0.0]).unwrap(), &[1]).unwrap();
        assert!(loss.is_finite());
    }

    #[test]
    fn bad_labels_rejected() {
        let logits = Tensor::<f32>::zeros(&[2, 4]);
        assert!(softmax_crossentropy(&logits, &[0]).is_err());
        assert!(softmax_crossentropy(&logits, &[0, 4]).is_err());
    }

    #[test]
    fn dense_known_values() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 0.0, -1.0, 2.0, 1.0, 0.5]).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.5, 0.0, 0.0]).unwrap();
        assert_eq!(dense_forward(&x, &w, &b).unwrap().data(), &[5.5, 2.0, 0.0]);
    }
}
