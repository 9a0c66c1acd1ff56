use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::Role;
use crate::error::Result;

use super::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `fan_in x fan_out`
    pub weight: Tensor,
    /// `1 x fan_out`
    pub bias: Tensor,
}

/// Shared attention projections, learned positional table and the two task
/// heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    /// `2k x input_width`, rows ordered therapist 1..k then client 1..k.
    pub positional: Tensor,
    pub therapist_head: Vec<Linear>,
    pub client_head: Vec<Linear>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Tensor::from_rows(fan_in, fan_out, data).expect("xavier shape")
}

/// Seeded initialization: Xavier-uniform weights, zero biases, positional
/// table drawn from N(0, 0.02^2).
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, a) = (cfg.input_width, cfg.attn_width);
    let w_q = xavier(&mut rng, w, a);
    let w_k = xavier(&mut rng, w, a);
    let w_v = xavier(&mut rng, w, a);
    let normal = Normal::new(0.0, 0.02).expect("valid std");
    let positional = Tensor::from_rows(
        2 * cfg.k,
        w,
        (0..2 * cfg.k * w).map(|_| rng.sample(normal)).collect(),
    )?;
    let mut head = |role: Role| -> Vec<Linear> {
        cfg.head_layers(role)
            .into_iter()
            .map(|(i, o)| Linear {
                weight: xavier(&mut rng, i, o),
                bias: Tensor::zeros(1, o),
            })
            .collect()
    };
    let therapist_head = head(Role::Therapist);
    let client_head = head(Role::Client);
    Ok(ModelParams {
        w_q,
        w_k,
        w_v,
        positional,
        therapist_head,
        client_head,
    })
}

impl ModelParams {
    pub fn head(&self, role: Role) -> &[Linear] {
        match role {
            Role::Therapist => &self.therapist_head,
            Role::Client => &self.client_head,
        }
    }

    /// Parameter names in declared (serialization) order.
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["w_q", "w_k", "w_v", "positional"]
            .map(String::from)
            .to_vec();
        for (role, head) in [
            ("therapist", &self.therapist_head),
            ("client", &self.client_head),
        ] {
            for i in 0..head.len() {
                names.push(format!("{role}.{i}.weight"));
                names.push(format!("{role}.{i}.bias"));
            }
        }
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.w_q, &self.w_k, &self.w_v, &self.positional];
        for head in [&self.therapist_head, &self.client_head] {
            for l in head {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.positional,
        ];
        for head in [&mut self.therapist_head, &mut self.client_head] {
            for l in head.iter_mut() {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out
    }

    pub fn layout(&self) -> Vec<ParamSpec> {
        self.names()
            .into_iter()
            .zip(self.tensors())
            .map(|(name, t)| ParamSpec {
                name,
                shape: t.shape().to_vec(),
            })
            .collect()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Copy with every value rounded to the nearest `f32`.
    pub fn rounded_to_f32(&self) -> ModelParams {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            for v in t.data_mut() {
                *v = f64::from(*v as f32);
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Records every parameter on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let mut leaf = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        let w_q = leaf(&self.w_q);
        let w_k = leaf(&self.w_k);
        let w_v = leaf(&self.w_v);
        let positional = leaf(&self.positional);
        let mut head = |h: &[Linear]| -> Vec<(Var, Var)> {
            h.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect()
        };
        let therapist_head = head(&self.therapist_head);
        let client_head = head(&self.client_head);
        BoundParams {
            w_q,
            w_k,
            w_v,
            positional,
            therapist_head,
            client_head,
        }
    }
}

/// Graph handles for one binding of [`ModelParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub positional: Var,
    pub therapist_head: Vec<(Var, Var)>,
    pub client_head: Vec<(Var, Var)>,
}

impl BoundParams {
    pub fn head(&self, role: Role) -> &[(Var, Var)] {
        match role {
            Role::Therapist => &self.therapist_head,
            Role::Client => &self.client_head,
        }
    }

    /// Handles in declared order, matching [`ModelParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.w_q, self.w_k, self.w_v, self.positional];
        for head in [&self.therapist_head, &self.client_head] {
            for &(w, b) in head {
                out.push(w);
                out.push(b);
            }
        }
        out
    }
}
