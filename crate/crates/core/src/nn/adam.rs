use crate::error::{Error, Result};

use super::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with one pair of moment buffers per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step_count: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step_count: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            p.check_same_shape(g)?;
        }
        if self.step_count == 0 && self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::shape("parameters do not match the optimizer state"));
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = mi.as_f64() / bc1;
                let v_hat = vi.as_f64() / bc2;
                *w -= T::from_f64(c.lr * m_hat / (v_hat.sqrt() + c.eps));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut w = scalar(0.0);
        let g = scalar(1.0);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut [&mut w], &[&g]).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((w.data()[0] - expected).abs() < 1e-15);
        assert!((w.data()[0] + 0.001).abs() < 1e-6);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = Tensor::new(vec![3], vec![0.3, -1.0, 2.0]).unwrap();
        let before = w.clone();
        let g = Tensor::zeros(&[3]);
        let mut adam = AdamState::new(AdamConfig::default());
        for _ in 0..100 {
            adam.step(&mut [&mut w], &[&g]).unwrap();
        }
        assert_eq!(w, before);
    }

    #[test]
    fn identical_scalars_follow_identical_paths() {
        let mut a = scalar(0.7);
        let mut b = scalar(0.7);
        let mut adam = AdamState::new(AdamConfig::default());
        for i in 0..50 {
            let g = scalar((i as f64 * 0.37).sin());
            adam.step(&mut [&mut a, &mut b], &[&g, &g]).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn misaligned_sets_rejected() {
        let mut a = scalar(0.0);
        let mut adam = AdamState::<f64>::new(AdamConfig::default());
        assert!(adam.step(&mut [&mut a], &[]).is_err());
        let g = Tensor::zeros(&[2]);
        assert!(adam.step(&mut [&mut a], &[&g]).is_err());
    }
}
