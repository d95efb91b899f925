use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};
use crate::numerics::params::ParamSet;

/// Adam with bias correction and decoupled weight decay. One state per
/// trainable parameter tensor, matched by insertion order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// First/second moment arrays keyed by parameter name, so the state
    /// survives a checkpoint round-trip even if ids shift.
    moments: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            moments: Vec::new(),
        }
    }

    /// Apply one update from the accumulated gradients of all trainable
    /// parameters. Gradients are not zeroed here.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        params.grads_finite()?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (_, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let n = p.value.len();
            let slot = match self.moments.iter_mut().find(|(name, _, _)| name == &p.name) {
                Some(s) => s,
                None => {
                    self.moments
                        .push((p.name.clone(), vec![0.0; n], vec![0.0; n]));
                    self.moments.last_mut().unwrap()
                }
            };
            if slot.1.len() != n {
                return Err(IvLabError::ShapeMismatch(format!(
                    "adam state for {} has length {}, parameter has {}",
                    p.name,
                    slot.1.len(),
                    n
                )));
            }
            let (m, v) = (&mut slot.1, &mut slot.2);
            let g = p.grad.data();
            let w = p.value.data_mut();
            for j in 0..n {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * w[j]);
            }
        }
        Ok(())
    }
}
