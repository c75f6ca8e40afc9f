use serde::{Deserialize, Serialize};

use super::{DenseMatrix, Gradients, ParamStore, TensorError};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter in store order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<DenseMatrix>,
    second: Vec<DenseMatrix>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || -> Vec<DenseMatrix> {
            store
                .iter()
                .map(|(_, _, v)| DenseMatrix::zeros(v.rows(), v.cols()))
                .collect()
        };
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &DenseMatrix {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &DenseMatrix {
        &self.second[i]
    }

    /// Applies one update with learning rate `lr`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<(), TensorError> {
        if !(lr >= 0.0) {
            return Err(TensorError::InvalidArgument(format!("learning rate must be >= 0, got {lr}")));
        }
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(TensorError::Shape {
                op: "adam_step",
                left: (store.len(), 1),
                right: (grads.len(), 1),
            });
        }
        for (id, g) in grads.iter() {
            let p = store.get(id);
            if g.shape() != p.shape() || self.first[id.0].shape() != p.shape() {
                return Err(TensorError::Shape {
                    op: "adam_step",
                    left: p.shape(),
                    right: g.shape(),
                });
            }
            if !g.is_finite() {
                return Err(TensorError::NonFinite { op: "adam_step" });
            }
        }

        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (id, g) in grads.iter() {
            let m = self.first[id.0].data_mut();
            let v = self.second[id.0].data_mut();
            let p = store.get_mut(id).data_mut();
            for (((pi, mi), vi), &gi) in p.iter_mut().zip(m).zip(v).zip(g.data()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `base_lr * (1 - step / total_steps)`, clamped at zero.
pub fn linear_decay_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64, TensorError> {
    if total_steps == 0 {
        return Err(TensorError::InvalidArgument("total_steps must be >= 1".into()));
    }
    if step > total_steps {
        return Err(TensorError::InvalidArgument(format!(
            "step {step} exceeds total_steps {total_steps}"
        )));
    }
    Ok((base_lr * (1.0 - step as f64 / total_steps as f64)).max(0.0))
}
