//! Adam with bias correction. State tensors are index-aligned with the
//! caller's parameter list; naming for persistence is the caller's job.

use crate::dtype::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TensorError::InvalidParameter {
                name: "lr",
                value: self.lr,
                reason: "learning rate must be finite and > 0",
            });
        }
        for (name, value) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&value) {
                return Err(TensorError::InvalidParameter {
                    name,
                    value,
                    reason: "Adam betas must lie in [0, 1)",
                });
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(TensorError::InvalidParameter {
                name: "eps",
                value: self.eps,
                reason: "Adam eps must be finite and > 0",
            });
        }
        Ok(())
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<E: Element> {
    pub step: u64,
    pub m: Vec<Tensor<E>>,
    pub v: Vec<Tensor<E>>,
}

impl<E: Element> AdamState<E> {
    /// Zeroed state matching the given parameter shapes.
    pub fn new(shapes: &[Vec<usize>]) -> Self {
        AdamState {
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
        }
    }
}

/// One update over index-aligned `params`/`grads`. A `None` gradient
/// (parameter unused by this loss) leaves its moments decaying as if the
/// gradient were zero, matching the dense-update convention.
pub fn adam_step<E: Element>(
    config: &AdamConfig,
    state: &mut AdamState<E>,
    params: &mut [&mut Tensor<E>],
    grads: &[Option<Tensor<E>>],
) -> Result<()> {
    config.validate()?;
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::InvalidParameter {
            name: "params",
            value: params.len() as f64,
            reason: "params, grads and optimizer state must be index-aligned",
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let inv_bc1 = 1.0 / (1.0 - config.beta1.powi(t));
    let inv_bc2 = 1.0 / (1.0 - config.beta2.powi(t));
    let b1 = E::from_f64(config.beta1);
    let b2 = E::from_f64(config.beta2);
    let one_m_b1 = E::from_f64(1.0 - config.beta1);
    let one_m_b2 = E::from_f64(1.0 - config.beta2);
    let lr = E::from_f64(config.lr);
    let eps = E::from_f64(config.eps);
    let c1 = E::from_f64(inv_bc1);
    let c2 = E::from_f64(inv_bc2);

    for (i, param) in params.iter_mut().enumerate() {
        let param: &mut Tensor<E> = param;
        let zero_grad: Vec<E>;
        let g: &[E] = match &grads[i] {
            Some(g) => {
                if g.shape() != param.shape() {
                    return Err(TensorError::ShapeMismatch {
                        op: "adam_step",
                        lhs: param.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
                g.data()
            }
            None => {
                zero_grad = vec![E::zero(); param.numel()];
                &zero_grad
            }
        };
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = param.data_mut();
        for j in 0..p.len() {
            m[j] = b1 * m[j] + one_m_b1 * g[j];
            v[j] = b2 * v[j] + one_m_b2 * g[j] * g[j];
            let m_hat = m[j] * c1;
            let v_hat = v[j] * c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut w = Tensor::from_vec(vec![1.0f64, -2.0, 0.5]);
        let mut state = AdamState::new(&[vec![3]]);
        let grads = vec![Some(Tensor::zeros(vec![3]))];
        adam_step(&AdamConfig::default(), &mut state, &mut [&mut w], &grads).unwrap();
        assert_eq!(w.data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn quadratic_converges_to_zero() {
        // loss = w^2 / 2, grad = w; 200 steps at lr 0.1 drives |w| below 1e-3
        let mut w = Tensor::from_vec(vec![1.0f64]);
        let mut state = AdamState::new(&[vec![1]]);
        let config = AdamConfig::with_lr(0.1);
        for _ in 0..200 {
            let grads = vec![Some(w.clone())];
            adam_step(&config, &mut state, &mut [&mut w], &grads).unwrap();
        }
        assert!(w.data()[0].abs() < 1e-3, "w = {}", w.data()[0]);
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // with bias correction the very first update is lr * g / (|g| + eps)
        let mut w = Tensor::from_vec(vec![0.0f64]);
        let mut state = AdamState::new(&[vec![1]]);
        let config = AdamConfig::with_lr(0.01);
        let grads = vec![Some(Tensor::from_vec(vec![5.0]))];
        adam_step(&config, &mut state, &mut [&mut w], &grads).unwrap();
        assert!((w.data()[0] + 0.01).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_learning_rate() {
        let mut w = Tensor::from_vec(vec![1.0f64]);
        let mut state = AdamState::new(&[vec![1]]);
        let grads = vec![Some(Tensor::from_vec(vec![1.0]))];
        let config = AdamConfig::with_lr(0.0);
        assert!(adam_step(&config, &mut state, &mut [&mut w], &grads).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut w = Tensor::from_vec(vec![1.0f64, 2.0]);
        let mut state = AdamState::new(&[vec![2]]);
        let grads = vec![Some(Tensor::from_vec(vec![1.0]))];
        let err =
            adam_step(&AdamConfig::default(), &mut state, &mut [&mut w], &grads).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }
}
