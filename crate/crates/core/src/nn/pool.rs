use super::{Scalar, Tensor};
use crate::Result;

/// Result of a 2x2/stride-2 max pool with the winning input index per output.
#[derive(Debug, Clone)]
pub struct PoolOutput<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<usize>,
}

/// 2x2 max pool with stride 2. Odd extents are padded on the right/bottom by
/// replicating the last row/column; ties go to the first index in raster order.
pub fn maxpool2d_forward<T: Scalar>(x: &Tensor<T>) -> Result<PoolOutput<T>> {
    let (n, h, w, c) = x.nhwc()?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut output = Tensor::zeros(&[n, oh, ow, c]);
    let mut argmax = vec![0usize; n * oh * ow * c];
    let data = x.data();
    let mut o = 0;
    for s in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = usize::MAX;
                    let mut best = T::neg_infinity();
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (iy, ix) = ((2 * oy + dy).min(h - 1), (2 * ox + dx).min(w - 1));
                            let idx = ((s * h + iy) * w + ix) * c + ch;
                            if best_idx == usize::MAX || data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    output.data_mut()[o] = best;
                    argmax[o] = best_idx;
                    o += 1;
                }
            }
        }
    }
    Ok(PoolOutput { output, argmax })
}

/// Routes each output gradient to its winning input.
pub fn maxpool2d_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    for (g, &idx) in grad_out.data().iter().zip(argmax) {
        dx.data_mut()[idx] = dx.data_mut()[idx] + *g;
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_routes_to_first() {
        let x = Tensor::<f32>::filled(&[1, 4, 4, 1], 2.0);
        let out = maxpool2d_forward(&x).unwrap();
        assert!(out.output.data().iter().all(|&v| v == 2.0));
        let dx = maxpool2d_backward(x.shape(), &out.argmax, &Tensor::filled(&[1, 2, 2, 1], 1.0));
        let expected: Vec<f32> = (0..16).map(|i| if (i / 4) % 2 == 0 && i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        assert_eq!(dx.data(), &expected[..]);
    }

    #[test]
    fn increasing_raster_picks_bottom_right() {
        let x = Tensor::<f32>::from_vec(&[1, 4, 4, 1], (0..16).map(|v| v as f32).collect()).unwrap();
        let out = maxpool2d_forward(&x).unwrap();
        assert_eq!(out.output.data(), &[5.0, 7.0, 13.0, 15.0]);
        assert_eq!(out.argmax, vec![5, 7, 13, 15]);
    }

    #[test]
    fn odd_extent_replicates_edge() {
        let x = Tensor::<f32>::from_vec(&[1, 3, 3, 1], (0..9).map(|v| v as f32).collect()).unwrap();
        let out = maxpool2d_forward(&x).unwrap();
        assert_eq!(out.output.shape(), &[1, 2, 2, 1]);
        assert_eq!(out.output.data(), &[4.0, 5.0, 7.0, 8.0]);
    }
}
