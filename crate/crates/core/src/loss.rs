//! Focal loss and the multi-task combination rule.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub gamma: f64,
    /// Per-class weights for the therapist task. `None` means inverse class
    /// frequency of the training labels, normalized to mean 1.
    pub alpha_therapist: Option<Vec<f64>>,
    pub alpha_client: Option<Vec<f64>>,
    /// `(therapist, client)` task weights.
    pub task_weights: (f64, f64),
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 2.0,
            alpha_therapist: None,
            alpha_client: None,
            task_weights: (1.0, 1.0),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "focal gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        for alpha in [&self.alpha_therapist, &self.alpha_client]
            .into_iter()
            .flatten()
        {
            if alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
                return Err(Error::Config(format!(
                    "alpha weights must be positive: {alpha:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Inverse class frequency weights normalized to mean 1. Absent classes are
/// counted once so their weight stays finite.
pub fn inverse_frequency_alpha(counts: &[usize]) -> Vec<f64> {
    let inv: Vec<f64> = counts.iter().map(|&c| 1.0 / c.max(1) as f64).collect();
    let mean = inv.iter().sum::<f64>() / inv.len() as f64;
    inv.into_iter().map(|w| w / mean).collect()
}

/// Mean over labelled rows of `-alpha_t (1 - p_t)^gamma ln p_t`, where `p_t`
/// is the softmax probability of the true class. Rows labelled `None` are
/// padding and excluded.
pub fn focal_loss(
    g: &mut Graph,
    logits: Var,
    labels: &[Option<usize>],
    gamma: f64,
    alpha: Option<&[f64]>,
) -> Result<Var> {
    let shape = g.value(logits).shape().to_vec();
    if labels.len() != shape[0] {
        return Err(Error::Shape {
            op: "focal_loss",
            lhs: shape,
            rhs: vec![labels.len()],
        });
    }
    if labels.iter().all(Option::is_none) {
        return Err(Error::EmptyMask("focal_loss"));
    }
    let n_classes = shape[1];
    if let Some(a) = alpha {
        if a.len() != n_classes {
            return Err(Error::Shape {
                op: "focal_loss alpha",
                lhs: shape,
                rhs: vec![a.len()],
            });
        }
    }
    if labels.iter().flatten().any(|&l| l >= n_classes) {
        return Err(Error::Config(format!("label outside 0..{n_classes}")));
    }
    let index: Vec<usize> = labels.iter().map(|l| l.unwrap_or(0)).collect();
    let mask: Vec<f64> = labels.iter().map(|l| l.map_or(0.0, |_| 1.0)).collect();

    let log_p = g.log_softmax_rows(logits)?;
    let log_pt = g.gather_cols(log_p, &index)?;
    let pt = g.exp(log_pt);
    let neg_pt = g.scale(pt, -1.0);
    let one_minus = g.add_scalar(neg_pt, 1.0);
    let modulator = g.pow(one_minus, gamma)?;
    let mut term = g.mul(modulator, log_pt)?;
    if let Some(a) = alpha {
        let weights = index.iter().map(|&c| a[c]).collect();
        let weights = g.constant(Tensor::from_rows(index.len(), 1, weights)?);
        term = g.mul(term, weights)?;
    }
    let term = g.scale(term, -1.0);
    g.mean_masked(term, &mask)
}

/// `w_t * loss_t + w_c * loss_c`, or the weighted single loss when only one
/// task is trained.
pub fn multitask_loss(
    g: &mut Graph,
    loss_t: Option<Var>,
    loss_c: Option<Var>,
    weights: (f64, f64),
) -> Result<Var> {
    let weight = |g: &mut Graph, v: Var, w: f64| if w == 1.0 { v } else { g.scale(v, w) };
    match (loss_t, loss_c) {
        (Some(t), Some(c)) => {
            let t = weight(g, t, weights.0);
            let c = weight(g, c, weights.1);
            g.add(t, c)
        }
        (Some(t), None) => Ok(weight(g, t, weights.0)),
        (None, Some(c)) => Ok(weight(g, c, weights.1)),
        (None, None) => Err(Error::EmptyMask("multitask_loss")),
    }
}
