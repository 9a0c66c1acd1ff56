use crate::autodiff::{Graph, Tensor, Var};
use crate::data::Role;
use crate::error::{Error, Result};
use crate::store::ContextWindow;

use super::{BoundParams, ModelConfig, ModelParams, Variant};

/// Nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `k x 4`, absent for `single_task_c`.
    pub therapist: Option<Var>,
    /// `k x 3`, absent for `single_task_t`.
    pub client: Option<Var>,
    /// Attention weights `2k x 2k` (absent for `no_context`).
    pub attention: Option<Var>,
    /// Value rows `2k x attn_width`.
    pub values: Var,
    /// Contextualized rows `2k x attn_width`.
    pub context: Var,
}

impl ForwardOutput {
    pub fn logits(&self, role: Role) -> Option<Var> {
        match role {
            Role::Therapist => self.therapist,
            Role::Client => self.client,
        }
    }
}

fn stacked_rows(window: &ContextWindow) -> Tensor {
    let mut data = window.therapist_rows.data().to_vec();
    data.extend_from_slice(window.client_rows.data());
    Tensor::from_rows(2 * window.k, window.width, data).expect("window rows")
}

fn head(g: &mut Graph, mut x: Var, layers: &[(Var, Var)]) -> Result<Var> {
    for (i, &(w, b)) in layers.iter().enumerate() {
        let h = g.matmul(x, w)?;
        x = g.add_row(h, b)?;
        if i + 1 < layers.len() {
            x = g.relu(x);
        }
    }
    Ok(x)
}

/// Stacks `[therapist; client]` rows, adds positional embeddings, applies the
/// shared single-head attention (padded keys masked out) and runs each task
/// head on its half of the contextualized rows.
pub fn forward(
    g: &mut Graph,
    p: &BoundParams,
    window: &ContextWindow,
    cfg: &ModelConfig,
) -> Result<ForwardOutput> {
    if window.width != cfg.input_width || window.k != cfg.k {
        return Err(Error::Shape {
            op: "forward",
            lhs: vec![window.k, window.width],
            rhs: vec![cfg.k, cfg.input_width],
        });
    }
    let k = cfg.k;
    let mut x = g.constant(stacked_rows(window));
    if cfg.use_positional {
        x = g.add(x, p.positional)?;
    }
    let values = g.matmul(x, p.w_v)?;
    let (context, attention) = match cfg.variant {
        Variant::NoContext => (values, None),
        _ => {
            let q = g.matmul(x, p.w_q)?;
            let keys = g.matmul(x, p.w_k)?;
            let kt = g.transpose(keys)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, 1.0 / (cfg.attn_width as f64).sqrt());
            let a = g.softmax_rows_masked(scores, Some(&window.key_mask()))?;
            (g.matmul(a, values)?, Some(a))
        }
    };
    let mut out = ForwardOutput {
        therapist: None,
        client: None,
        attention,
        values,
        context,
    };
    if cfg.variant.trains(Role::Therapist) {
        let rows = g.slice_rows(context, 0, k)?;
        out.therapist = Some(head(g, rows, p.head(Role::Therapist))?);
    }
    if cfg.variant.trains(Role::Client) {
        let rows = g.slice_rows(context, k, 2 * k)?;
        out.client = Some(head(g, rows, p.head(Role::Client))?);
    }
    Ok(out)
}

/// Logits for one window without recording gradients.
pub fn infer(
    params: &ModelParams,
    window: &ContextWindow,
    cfg: &ModelConfig,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let out = forward(&mut g, &bound, window, cfg)?;
    let take = |v: Option<Var>| v.map(|v| g.value(v).clone());
    Ok((take(out.therapist), take(out.client)))
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            logits
                .row(r)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}
