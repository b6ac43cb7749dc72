use super::{Model, Param, Scalar, Tensor};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u32,
    moments: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, model: &mut Model<T>) {
        self.step_with(|f| model.visit_params(f));
    }

    /// One update over the parameters yielded by `visit`, which must always
    /// yield the same parameters in the same order.
    pub fn step_with(&mut self, visit: impl FnOnce(&mut dyn FnMut(&mut Param<T>))) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = T::from_f64(self.lr / c1);
        let (b1, b2, eps) = (T::from_f64(b1), T::from_f64(b2), T::from_f64(self.eps));
        let inv_c2 = T::from_f64(1.0 / c2);
        let moments = &mut self.moments;
        let mut idx = 0;
        visit(&mut |p: &mut Param<T>| {
            if idx == moments.len() {
                moments.push((Tensor::zeros(p.value.shape()), Tensor::zeros(p.value.shape())));
            }
            let (m, v) = &mut moments[idx];
            debug_assert_eq!(m.shape(), p.value.shape());
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(p.grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *w = *w - step * *m / ((*v * inv_c2).sqrt() + eps);
            }
            idx += 1;
        });
    }
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self::new(1e-3, 0.9, 0.999, 1e-8)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f64, g: f64) -> Param<f64> {
        let mut p = Param::new(Tensor::filled(&[1], x));
        p.grad.fill(g);
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(0.7, 0.0);
        let mut adam = Adam::<f64>::default();
        for _ in 0..5 {
            adam.step_with(|f| f(&mut p));
        }
        assert_eq!(p.value.data()[0], 0.7);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for g in [3.0, -0.02, 1e-3] {
            let mut p = scalar(0.0, g);
            let mut adam = Adam::<f64>::new(0.01, 0.9, 0.999, 1e-8);
            adam.step_with(|f| f(&mut p));
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((p.value.data()[0] - expected).abs() < 1e-12, "{g}");
        }
    }

    #[test]
    fn minimises_square() {
        // scalar recurrence oracle
        let (mut x, mut m, mut v) = (1.0f64, 0.0, 0.0);
        for t in 1..=100 {
            let g = 2.0 * x;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        let mut p = scalar(1.0, 0.0);
        let mut adam = Adam::<f64>::new(0.1, 0.9, 0.999, 1e-8);
        for _ in 0..100 {
            let x = p.value.data()[0];
            p.grad.fill(2.0 * x);
            adam.step_with(|f| f(&mut p));
        }
        let got = p.value.data()[0];
        assert!((got - x).abs() < 1e-9);
        assert!(got.abs() < 0.05);
    }
}
