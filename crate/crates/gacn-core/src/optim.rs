//! Adam optimizer, one instance per parameter tensor.

use crate::diff::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(param_len: usize, lr: T) -> Self {
        Self {
            lr,
            beta1: T::cast(0.9),
            beta2: T::cast(0.999),
            eps: T::cast(1e-8),
            m: vec![T::zero(); param_len],
            v: vec![T::zero(); param_len],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> T {
        self.lr
    }

    pub fn set_lr(&mut self, lr: T) {
        self.lr = lr;
    }

    /// Moment buffers, for checkpointing.
    pub fn state(&self) -> (&[T], &[T], u64) {
        (&self.m, &self.v, self.step)
    }

    pub fn restore(&mut self, m: Vec<T>, v: Vec<T>, step: u64) {
        assert!(m.len() == self.m.len() && v.len() == self.v.len());
        self.m = m;
        self.v = v;
        self.step = step;
    }

    /// Applies one update using the gradient stored on `param`, then clears
    /// the gradient. A missing gradient counts as all-zero.
    pub fn step(&mut self, param: &mut Tensor<T>) {
        assert_eq!(param.len(), self.m.len(), "optimizer/parameter length mismatch");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let grad: Vec<T> = match param.grad() {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); param.len()],
        };
        let data = param.as_mut_slice();
        for i in 0..data.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (T::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (T::one() - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        param.zero_grad();
    }
}
