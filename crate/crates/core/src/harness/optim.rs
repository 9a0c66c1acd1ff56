use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn steps(&self) -> u64 {
        self.t
    }
}

impl AdamW {
    /// One update of every tensor in `params`:
    /// `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`.
    /// The decay term acts on the parameters directly, not through the
    /// gradient.
    pub fn step(
        &self,
        params: &mut [&mut Tensor],
        grads: &[&Tensor],
        names: &[String],
        state: &mut AdamState,
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::CountMismatch(format!(
                "{} parameters, {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adamw_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if let Some(index) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: names.get(i).cloned().unwrap_or_else(|| i.to_string()),
                    index,
                });
            }
        }
        if state.m.is_empty() {
            state.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            state.v = state.m.clone();
        }
        state.t += 1;
        let t = state.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        {
            for (((theta, &grad), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * grad;
                *v = self.beta2 * *v + (1.0 - self.beta2) * grad * grad;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -=
                    self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *theta);
            }
        }
        Ok(())
    }
}
