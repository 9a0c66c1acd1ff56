use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{AudioSpan, Role, Session, Utterance, UtteranceKey};
use crate::error::{Error, Result};

use super::EmbeddingStore;

/// Client label forced by each therapist class at coupled positions:
/// reflection -> change, question -> neutral, input -> sustain, other -> neutral.
pub const COUPLED_CLIENT_LABEL: [usize; 4] = [0, 1, 2, 1];

/// Parameters of the synthetic session generator.
///
/// Every utterance embedding is `signal_strength * mean[role][class]` plus unit
/// Gaussian noise. With probability `cross_task_coupling` a client utterance at
/// role index `i >= dependency_lag` instead takes its label from the therapist
/// utterance at index `i - dependency_lag`, and its own embedding is pure
/// noise.
///
/// `reply_correlation` links every client utterance at `i >= dependency_lag`
/// to the therapist utterance it answers: the client's noise is
/// `rho * R n_t + sqrt(1 - rho^2) * z`, where `n_t` is that therapist
/// utterance's noise and `R` is a fixed random rotation. The result is still
/// unit Gaussian and independent of any label, so it carries no class signal;
/// it only makes the answered utterance recognizable by content. The rotation
/// makes the link directional, so a reply resembles what it answers without
/// the therapist utterance resembling its reply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_sessions: usize,
    pub utterances_per_role: usize,
    pub seed: u64,
    pub signal_strength: f64,
    pub cross_task_coupling: f64,
    pub dependency_lag: usize,
    pub reply_correlation: f64,
    pub d_text: usize,
    pub d_audio: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_sessions: 40,
            utterances_per_role: 40,
            seed: 0,
            signal_strength: 3.0,
            cross_task_coupling: 0.8,
            dependency_lag: 2,
            reply_correlation: 0.0,
            d_text: 16,
            d_audio: 8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.cross_task_coupling) {
            return Err(Error::Config(format!(
                "cross_task_coupling {} outside [0, 1]",
                self.cross_task_coupling
            )));
        }
        if !(0.0..1.0).contains(&self.reply_correlation) {
            return Err(Error::Config(format!(
                "reply_correlation {} outside [0, 1)",
                self.reply_correlation
            )));
        }
        if self.n_sessions == 0
            || self.utterances_per_role == 0
            || self.d_text == 0
            || self.d_audio == 0
        {
            return Err(Error::Config("synthetic sizes must be positive".into()));
        }
        if !self.signal_strength.is_finite() {
            return Err(Error::Config("signal_strength must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub sessions: Vec<Session>,
    pub store: EmbeddingStore,
    /// Client utterances whose label was copied from the lagged therapist label.
    pub coupled: BTreeSet<UtteranceKey>,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// Haar-ish random orthogonal matrix by Gram-Schmidt on Gaussian rows.
fn rotation(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v = unit_vector(rng, dim);
        for r in &rows {
            let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            rows.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    rows
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.d_audio + cfg.d_text;
    let means: Vec<Vec<Vec<f64>>> = Role::BOTH
        .iter()
        .map(|r| {
            (0..r.n_classes())
                .map(|_| unit_vector(&mut rng, dim))
                .collect()
        })
        .collect();
    let rot = if cfg.reply_correlation > 0.0 {
        rotation(&mut rng, dim)
    } else {
        Vec::new()
    };
    let t_dist = WeightedIndex::new(Role::Therapist.priors()).expect("valid priors");
    let c_dist = WeightedIndex::new(Role::Client.priors()).expect("valid priors");

    let mut utterances = Vec::new();
    let mut text = Vec::new();
    let mut audio = Vec::new();
    let mut coupled = BTreeSet::new();
    let mut sessions = Vec::with_capacity(cfg.n_sessions);

    for s in 0..cfg.n_sessions {
        let session_id = format!("syn{:04}", s);
        let n = cfg.utterances_per_role;
        let t_labels: Vec<usize> = (0..n).map(|_| t_dist.sample(&mut rng)).collect();
        let mut session_utts = Vec::with_capacity(2 * n);
        let mut t_noise: Vec<Vec<f64>> = Vec::with_capacity(n);
        let rho = cfg.reply_correlation;
        let rest = (1.0 - rho * rho).sqrt();
        for i in 0..n {
            for role in Role::BOTH {
                let (label, signal) = match role {
                    Role::Therapist => (t_labels[i], true),
                    Role::Client => {
                        let couple = rng.gen::<f64>() < cfg.cross_task_coupling;
                        if couple && i >= cfg.dependency_lag {
                            (
                                COUPLED_CLIENT_LABEL[t_labels[i - cfg.dependency_lag]],
                                false,
                            )
                        } else {
                            (c_dist.sample(&mut rng), true)
                        }
                    }
                };
                let seq = (2 * i + usize::from(role == Role::Client)) as u32;
                let start = u64::from(seq) * 4000;
                let u = Utterance::new(
                    session_id.clone(),
                    seq,
                    role,
                    format!("synthetic {role} utterance {i}"),
                    Some(AudioSpan {
                        start_ms: start,
                        end_ms: start + 3000,
                    }),
                    label,
                )?;
                if !signal {
                    coupled.insert(u.key());
                }
                let mean = &means[role as usize][label];
                let mut noise: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                match role {
                    Role::Therapist => t_noise.push(noise.clone()),
                    Role::Client if rho > 0.0 && i >= cfg.dependency_lag => {
                        let t = &t_noise[i - cfg.dependency_lag];
                        for (z, r) in noise.iter_mut().zip(&rot) {
                            let rt: f64 = r.iter().zip(t).map(|(a, b)| a * b).sum();
                            *z = rho * rt + rest * *z;
                        }
                    }
                    Role::Client => {}
                }
                let v: Vec<f32> = (0..dim)
                    .map(|d| {
                        let shift = if signal {
                            cfg.signal_strength * mean[d]
                        } else {
                            0.0
                        };
                        (shift + noise[d]) as f32
                    })
                    .collect();
                audio.push(v[..cfg.d_audio].to_vec());
                text.push(v[cfg.d_audio..].to_vec());
                session_utts.push(u.clone());
                utterances.push(u);
            }
        }
        sessions.push(Session::new(session_id, session_utts, None)?);
    }

    let store =
        EmbeddingStore::from_utterances(&utterances, &text, &audio, cfg.d_text, cfg.d_audio)?;
    Ok(SynthData {
        sessions,
        store,
        coupled,
    })
}
