//! Parameter updates over the flat buffers.

use serde::{Deserialize, Serialize};

use crate::model::{GradientBundle, Parameters};
use crate::real::Real;

/// Adam hyperparameters are fixed: beta1 = 0.9, beta2 = 0.999, eps = 1e-8,
/// with bias correction. Constant learning rate in both variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: f64,
    step_count: usize,
    first_moment: Vec<T>,
    second_moment: Vec<T>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (vec![T::zero(); n_params], vec![T::zero(); n_params]),
        };
        Self { kind, lr, step_count: 0, first_moment: m, second_moment: v }
    }

    pub fn step(&mut self, params: &mut Parameters<T>, grads: &GradientBundle<T>) {
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                let lr = T::from_f64(self.lr);
                for (p, &g) in params.as_flat_mut().iter_mut().zip(grads.as_flat()) {
                    *p = *p - lr * g;
                }
            }
            OptimizerKind::Adam => {
                let b1 = T::from_f64(ADAM_BETA1);
                let b2 = T::from_f64(ADAM_BETA2);
                let one = T::one();
                let eps = T::from_f64(ADAM_EPS);
                let corr1 = T::from_f64(1.0 - ADAM_BETA1.powi(self.step_count as i32));
                let corr2 = T::from_f64(1.0 - ADAM_BETA2.powi(self.step_count as i32));
                let lr = T::from_f64(self.lr);
                for ((p, &g), (m, v)) in params
                    .as_flat_mut()
                    .iter_mut()
                    .zip(grads.as_flat())
                    .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
                {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let m_hat = *m / corr1;
                    let v_hat = *v / corr2;
                    *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

/// Scales gradients down to the given global L2 norm when they exceed it.
pub fn clip_global_norm<T: Real>(grads: &mut GradientBundle<T>, max_norm: f64) {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(T::from_f64(max_norm / norm));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_parameters, GradientBundle, ModelConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            n_heads: 2,
            d_model: 4,
            d_ffn: 8,
            vocab_size: 5,
            max_len: 6,
            seed: 1,
        }
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut params = init_parameters::<f64>(&cfg()).unwrap();
        let before = params.as_flat()[0];
        let mut grads = GradientBundle::zeros(&cfg());
        grads.as_flat_mut()[0] = 2.0;
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, params.len());
        opt.step(&mut params, &grads);
        assert!((params.as_flat()[0] - (before - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut params = init_parameters::<f64>(&cfg()).unwrap();
        let before: Vec<f64> = params.as_flat().to_vec();
        let mut grads = GradientBundle::zeros(&cfg());
        grads.as_flat_mut()[3] = 0.5;
        grads.as_flat_mut()[7] = -0.125;
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, params.len());
        opt.step(&mut params, &grads);
        // Bias-corrected first step moves by ~lr in the gradient's sign.
        assert!((params.as_flat()[3] - (before[3] - 0.01)).abs() < 1e-6);
        assert!((params.as_flat()[7] - (before[7] + 0.01)).abs() < 1e-6);
        assert_eq!(params.as_flat()[0], before[0]);
    }

    #[test]
    fn clipping_preserves_direction() {
        let mut grads = GradientBundle::<f64>::zeros(&cfg());
        grads.as_flat_mut()[0] = 3.0;
        grads.as_flat_mut()[1] = 4.0;
        clip_global_norm(&mut grads, 1.0);
        let norm = grads.global_norm();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!((grads.as_flat()[0] / grads.as_flat()[1] - 0.75).abs() < 1e-12);
        // Below the threshold nothing changes.
        let mut small = GradientBundle::<f64>::zeros(&cfg());
        small.as_flat_mut()[0] = 0.5;
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small.as_flat()[0], 0.5);
    }
}
