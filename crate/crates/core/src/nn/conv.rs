//! 2D cross-correlation on NHWC tensors via im2col + GEMM.
//!
//! Kernels are `[kh, kw, c_in, c_out]`. One sample is lowered at a time so the
//! column buffer stays at `H_out * W_out * kh * kw * c_in` values.

use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output size `ceil(H / stride)`, zero padding split with the extra cell at the bottom/right.
    Same,
    /// No padding.
    Valid,
}

/// Output extent and leading pad along one axis.
fn axis(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if input < kernel {
                return Err(Error::invalid(format!("kernel {kernel} larger than input {input}")));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

/// Geometry of one convolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub c_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub c_out: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

impl ConvGeometry {
    pub fn new(
        (in_h, in_w, c_in): (usize, usize, usize),
        (kh, kw, c_out): (usize, usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        if stride == 0 || kh == 0 || kw == 0 {
            return Err(Error::invalid("stride and kernel size must be positive"));
        }
        let (out_h, pad_top) = axis(in_h, kh, stride, padding)?;
        let (out_w, pad_left) = axis(in_w, kw, stride, padding)?;
        Ok(Self {
            in_h,
            in_w,
            c_in,
            kh,
            kw,
            c_out,
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.c_in
    }

    fn pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input row/column for output position `o` and kernel offset `k`, if inside the image.
    fn source(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        (o * stride + k).checked_sub(pad).filter(|&i| i < len)
    }

    fn im2col<T: Scalar>(&self, image: &[T], cols: &mut [T]) {
        let patch = self.patch();
        let c = self.c_in;
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let row = &mut cols[(oy * self.out_w + ox) * patch..][..patch];
                for ky in 0..self.kh {
                    let iy = Self::source(oy, ky, self.stride, self.pad_top, self.in_h);
                    for kx in 0..self.kw {
                        let dst = &mut row[(ky * self.kw + kx) * c..][..c];
                        match (iy, Self::source(ox, kx, self.stride, self.pad_left, self.in_w)) {
                            (Some(iy), Some(ix)) => dst.copy_from_slice(&image[(iy * self.in_w + ix) * c..][..c]),
                            _ => dst.fill(T::zero()),
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], image: &mut [T]) {
        let patch = self.patch();
        let c = self.c_in;
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let row = &cols[(oy * self.out_w + ox) * patch..][..patch];
                for ky in 0..self.kh {
                    let Some(iy) = Self::source(oy, ky, self.stride, self.pad_top, self.in_h) else {
                        continue;
                    };
                    for kx in 0..self.kw {
                        if let Some(ix) = Self::source(ox, kx, self.stride, self.pad_left, self.in_w) {
                            let dst = &mut image[(iy * self.in_w + ix) * c..][..c];
                            for (d, s) in dst.iter_mut().zip(&row[(ky * self.kw + kx) * c..][..c]) {
                                *d = *d + *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, padding: Padding) -> Result<(usize, ConvGeometry)> {
    let (n, h, wd, c) = x.nhwc()?;
    let [kh, kw, c_in, c_out] = w.shape()[..] else {
        return Err(Error::invalid(format!("kernel must be [kh, kw, c_in, c_out], got {:?}", w.shape())));
    };
    if c_in != c {
        return Err(Error::invalid(format!("input has {c} channels, kernel expects {c_in}")));
    }
    Ok((n, ConvGeometry::new((h, wd, c), (kh, kw, c_out), stride, padding)?))
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (n, g) = geometry(x, w, stride, padding)?;
    if b.shape() != [g.c_out] {
        return Err(Error::invalid(format!("bias must be [{}], got {:?}", g.c_out, b.shape())));
    }
    let (patch, pixels) = (g.patch(), g.pixels());
    let in_len = g.in_h * g.in_w * g.c_in;
    let out_len = pixels * g.c_out;
    let mut out = Tensor::zeros(&[n, g.out_h, g.out_w, g.c_out]);
    let mut cols = vec![T::zero(); pixels * patch];
    for s in 0..n {
        let y = &mut out.data_mut()[s * out_len..][..out_len];
        for row in y.chunks_exact_mut(g.c_out) {
            row.copy_from_slice(b.data());
        }
        g.im2col(&x.data()[s * in_len..][..in_len], &mut cols);
        T::gemm(
            pixels,
            patch,
            g.c_out,
            T::one(),
            &cols,
            patch as isize,
            1,
            w.data(),
            g.c_out as isize,
            1,
            T::one(),
            y,
            g.c_out as isize,
            1,
        );
    }
    Ok(out)
}

/// Gradients of a convolution with respect to input, kernel and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<ConvGrads<T>> {
    let (n, g) = geometry(x, w, stride, padding)?;
    if grad_out.shape() != [n, g.out_h, g.out_w, g.c_out] {
        return Err(Error::invalid(format!(
            "output gradient shape {:?} does not match convolution output",
            grad_out.shape()
        )));
    }
    let (patch, pixels) = (g.patch(), g.pixels());
    let in_len = g.in_h * g.in_w * g.c_in;
    let out_len = pixels * g.c_out;
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[g.c_out]);
    let mut cols = vec![T::zero(); pixels * patch];
    for s in 0..n {
        let dy = &grad_out.data()[s * out_len..][..out_len];
        for row in dy.chunks_exact(g.c_out) {
            for (acc, v) in db.data_mut().iter_mut().zip(row) {
                *acc = *acc + *v;
            }
        }
        g.im2col(&x.data()[s * in_len..][..in_len], &mut cols);
        // dW += cols^T dY
        T::gemm(
            patch,
            pixels,
            g.c_out,
            T::one(),
            &cols,
            1,
            patch as isize,
            dy,
            g.c_out as isize,
            1,
            T::one(),
            dw.data_mut(),
            g.c_out as isize,
            1,
        );
        // dcols = dY W^T
        T::gemm(
            pixels,
            g.c_out,
            patch,
            T::one(),
            dy,
            g.c_out as isize,
            1,
            w.data(),
            1,
            g.c_out as isize,
            T::zero(),
            &mut cols,
            patch as isize,
            1,
        );
        g.col2im(&cols, &mut dx.data_mut()[s * in_len..][..in_len]);
    }
    Ok(ConvGrads { dx, dw, db })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_one_by_one() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 3, 2], (0..12).map(|v| v as f64).collect()).unwrap();
        let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv2d_forward(&x, &w, &Tensor::zeros(&[2]), 1, Padding::Same).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_sums_nine() {
        let x = Tensor::<f32>::filled(&[1, 5, 6, 1], 1.0);
        let w = Tensor::filled(&[3, 3, 1, 1], 1.0);
        let y = conv2d_forward(&x, &w, &Tensor::zeros(&[1]), 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4, 1]);
        assert!(y.data().iter().all(|&v| v == 9.0));
        let same = conv2d_forward(&x, &w, &Tensor::zeros(&[1]), 1, Padding::Same).unwrap();
        assert_eq!(same.shape(), &[1, 5, 6, 1]);
        assert_eq!(same.data()[0], 4.0);
        assert_eq!(same.data()[7], 9.0);
    }

    #[test]
    fn strided_same_halves() {
        let g = ConvGeometry::new((128, 128, 16), (3, 3, 32), 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top), (64, 64, 0));
        let g = ConvGeometry::new((7, 7, 1), (3, 3, 1), 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (4, 1));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 4, 4, 3]);
        let w = Tensor::zeros(&[3, 3, 2, 4]);
        assert!(matches!(
            conv2d_forward(&x, &w, &Tensor::zeros(&[4]), 1, Padding::Same),
            Err(Error::InvalidArgument(_))
        ));
    }

    /// Direct nested-loop correlation as an independent reference.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize, out: (usize, usize)) -> Vec<f64> {
        let (n, h, wd, c) = x.nhwc().unwrap();
        let [kh, kw, _, co] = w.shape()[..] else { unreachable!() };
        let mut y = vec![0.0; n * out.0 * out.1 * co];
        for s in 0..n {
            for oy in 0..out.0 {
                for ox in 0..out.1 {
                    for o in 0..co {
                        let mut acc = 0.0;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let (iy, ix) = ((oy * stride + ky) as i64 - pad as i64, (ox * stride + kx) as i64 - pad as i64);
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                    continue;
                                }
                                for ci in 0..c {
                                    acc += x.data()[((s * h + iy as usize) * wd + ix as usize) * c + ci]
                                        * w.data()[((ky * kw + kx) * c + ci) * co + o];
                                }
                            }
                        }
                        y[((s * out.0 + oy) * out.1 + ox) * co + o] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn matches_naive_loops() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(&[2, 5, 5, 3], 1.0, &mut rng);
        let w = Tensor::<f64>::randn(&[3, 3, 3, 4], 1.0, &mut rng);
        let y = conv2d_forward(&x, &w, &Tensor::zeros(&[4]), 1, Padding::Same).unwrap();
        for (a, b) in y.data().iter().zip(naive(&x, &w, 1, 1, (5, 5))) {
            assert!((a - b).abs() < 1e-12);
        }
        let y = conv2d_forward(&x, &w, &Tensor::zeros(&[4]), 2, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2, 4]);
        for (a, b) in y.data().iter().zip(naive(&x, &w, 2, 0, (2, 2))) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
