use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are created lazily on the
/// first step and matched to parameters by position.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update and zeroes the gradients.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (ob1, ob2) = (T::one() - b1, T::one() - b2);
        let step_size = T::from_f64(c.learning_rate / bc1);
        let inv_bc2 = T::from_f64(1.0 / bc2);
        let eps = T::from_f64(c.epsilon);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            let w = p.value.data_mut();
            for i in 0..w.len() {
                md[i] = b1 * md[i] + ob1 * g[i];
                vd[i] = b2 * vd[i] + ob2 * g[i] * g[i];
                w[i] -= step_size * md[i] / ((vd[i] * inv_bc2).sqrt() + eps);
            }
            p.grad.fill(T::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64, g: f64) -> Param<f64> {
        let mut p = Param::new(Tensor::full(&[1], v));
        p.grad.data_mut()[0] = g;
        p
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = scalar(1.5, 0.0);
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            opt.step(&mut [&mut p]);
        }
        assert_eq!(p.value.data()[0], 1.5);
    }

    #[test]
    fn first_step_is_learning_rate() {
        let mut p = scalar(0.0, 3.7);
        let mut opt = Adam::new(AdamConfig::default());
        opt.step(&mut [&mut p]);
        assert!((p.value.data()[0] + 1e-3).abs() < 1e-9);
        assert_eq!(p.grad.data()[0], 0.0);
    }
}
