use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::data::{
    build_all_windows, make_folds, FoldPlan, Role, Session, Split, StrideMode, UtteranceKey,
    WindowSpec,
};
use crate::error::{Error, Result};
use crate::loss::{focal_loss, inverse_frequency_alpha, multitask_loss, LossConfig};
use crate::metrics::{f1_report, EvalReport};
use crate::model::{
    forward, infer, init_params, predict, Checkpoint, ModelConfig, ModelParams, Variant,
};
use crate::parallel;
use crate::store::{assemble_rows, ContextWindow, EmbeddingStore};

use super::optim::{AdamState, AdamW};

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: AdamW,
    pub epochs: usize,
    /// Windows averaged per optimizer update.
    pub batch_size: usize,
    pub seed: u64,
    pub n_folds: usize,
    /// Test folds to run; all of them when `None`.
    pub folds: Option<Vec<usize>>,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamW::default(),
            epochs: 100,
            batch_size: 1,
            seed: 0,
            n_folds: 5,
            folds: None,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", o.lr)));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return Err(Error::Config(
                "eps must be positive and weight_decay non-negative".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.n_folds < 3 {
            return Err(Error::Config(format!(
                "need at least 3 folds, got {}",
                self.n_folds
            )));
        }
        if let Some(f) = &self.folds {
            if let Some(bad) = f.iter().find(|&&i| i >= self.n_folds) {
                return Err(Error::Config(format!(
                    "fold {bad} out of range for {} folds",
                    self.n_folds
                )));
            }
        }
        self.loss.validate()?;
        self.model.validate()
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        c.model.variant = variant;
        c
    }
}

/// A store together with the sessions reconstructed from it.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub store: EmbeddingStore,
    pub sessions: Vec<Session>,
}

/// Window layouts and the matching embedding rows.
#[derive(Clone, Debug, Default)]
pub struct Prepared {
    pub specs: Vec<WindowSpec>,
    pub windows: Vec<ContextWindow>,
}

impl Dataset {
    pub fn new(store: EmbeddingStore) -> Result<Self> {
        let sessions = store.sessions()?;
        Ok(Dataset { store, sessions })
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.iter().map(|s| s.session_id.clone()).collect()
    }

    pub fn fold_plan(&self, n_folds: usize, seed: u64) -> Result<FoldPlan> {
        make_folds(&self.sessions, n_folds, seed)
    }

    pub fn prepare(&self, ids: &[String], cfg: &ModelConfig, mode: StrideMode) -> Result<Prepared> {
        let wanted: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        let chosen = self
            .sessions
            .iter()
            .filter(|s| wanted.contains(s.session_id.as_str()));
        let (specs, _) = build_all_windows(chosen, cfg.k, mode)?;
        let windows = specs
            .iter()
            .map(|s| assemble_rows(&self.store, s, cfg.modality))
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared { specs, windows })
    }
}

/// One scored utterance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScoredUtterance {
    pub key: UtteranceKey,
    pub label: usize,
    pub predicted: usize,
}

/// Predictions at every scored position, in window order.
pub fn predict_prepared(
    params: &ModelParams,
    data: &Prepared,
    cfg: &ModelConfig,
    par: bool,
) -> Result<Vec<ScoredUtterance>> {
    let idx: Vec<usize> = (0..data.windows.len()).collect();
    let per_window = parallel::try_map(&idx, par, |&i| {
        let (w, spec) = (&data.windows[i], &data.specs[i]);
        let (t, c) = infer(params, w, cfg)?;
        let mut out = Vec::new();
        for (role, logits) in [(Role::Therapist, t), (Role::Client, c)] {
            let Some(logits) = logits else { continue };
            let pred = predict(&logits);
            for p in w.scored_positions(role) {
                if let Some(slot) = &spec.slots(role)[p] {
                    out.push(ScoredUtterance {
                        key: slot.key.clone(),
                        label: slot.label,
                        predicted: pred[p],
                    });
                }
            }
        }
        Ok(out)
    })?;
    Ok(per_window.into_iter().flatten().collect())
}

/// Per-task reports over a set of windows. Tasks the variant does not train
/// are `None`; a trained task with no scored positions gets an empty report.
pub fn evaluate(
    params: &ModelParams,
    data: &Prepared,
    cfg: &ModelConfig,
    par: bool,
) -> Result<EvalReport> {
    let scored = predict_prepared(params, data, cfg, par)?;
    let task = |role: Role| -> Result<Option<crate::metrics::TaskReport>> {
        if !cfg.variant.trains(role) {
            return Ok(None);
        }
        let (p, l): (Vec<usize>, Vec<usize>) = scored
            .iter()
            .filter(|s| s.key.role == role)
            .map(|s| (s.predicted, s.label))
            .unzip();
        Ok(Some(f1_report(&p, &l, cfg.n_classes(role))?.named(role)))
    };
    Ok(EvalReport {
        therapist: task(Role::Therapist)?,
        client: task(Role::Client)?,
    })
}

/// Which declared-order parameters receive updates. Parameters that never
/// reach the loss (the other task's head, the query/key projections without
/// context, unused positions) are left exactly at their initial values.
pub fn trained_mask(params: &ModelParams, cfg: &ModelConfig) -> Vec<bool> {
    params
        .names()
        .iter()
        .map(|n| match n.as_str() {
            "w_q" | "w_k" => cfg.variant != Variant::NoContext,
            "w_v" => true,
            "positional" => cfg.use_positional,
            n if n.starts_with("therapist.") => cfg.variant.trains(Role::Therapist),
            n if n.starts_with("client.") => cfg.variant.trains(Role::Client),
            _ => true,
        })
        .collect()
}

/// Class weights for a task from training-label counts, or the configured
/// override.
fn alpha_for(role: Role, train: &Prepared, cfg: &TrainConfig) -> Vec<f64> {
    let fixed = match role {
        Role::Therapist => &cfg.loss.alpha_therapist,
        Role::Client => &cfg.loss.alpha_client,
    };
    if let Some(a) = fixed {
        return a.clone();
    }
    let mut counts = vec![0; cfg.model.n_classes(role)];
    for w in &train.windows {
        for l in w.labels(role).iter().flatten() {
            counts[*l] += 1;
        }
    }
    inverse_frequency_alpha(&counts)
}

pub struct Trainer<'a> {
    cfg: &'a TrainConfig,
    alpha_t: Vec<f64>,
    alpha_c: Vec<f64>,
    mask: Vec<bool>,
    names: Vec<String>,
    state: AdamState,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a TrainConfig, params: &ModelParams, train: &Prepared) -> Self {
        let mask = trained_mask(params, &cfg.model);
        let names = params
            .names()
            .into_iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(n, _)| n)
            .collect();
        Trainer {
            cfg,
            alpha_t: alpha_for(Role::Therapist, train, cfg),
            alpha_c: alpha_for(Role::Client, train, cfg),
            mask,
            names,
            state: AdamState::default(),
        }
    }

    /// Loss and gradients of the trained parameters for one window, or
    /// `None` when no trained task has a label in it.
    pub fn gradients(
        &self,
        params: &ModelParams,
        window: &ContextWindow,
    ) -> Result<Option<(f64, Vec<Tensor>)>> {
        let m = &self.cfg.model;
        let mut g = Graph::new();
        let bound = params.bind(&mut g, true);
        let out = forward(&mut g, &bound, window, m)?;
        let gamma = self.cfg.loss.gamma;
        let mut task_loss = |role: Role, alpha: &[f64]| -> Result<Option<crate::autodiff::Var>> {
            match out.logits(role) {
                Some(logits) if window.labels(role).iter().any(Option::is_some) => Ok(Some(
                    focal_loss(&mut g, logits, window.labels(role), gamma, Some(alpha))?,
                )),
                _ => Ok(None),
            }
        };
        let lt = task_loss(Role::Therapist, &self.alpha_t)?;
        let lc = task_loss(Role::Client, &self.alpha_c)?;
        if lt.is_none() && lc.is_none() {
            return Ok(None);
        }
        let loss = multitask_loss(&mut g, lt, lc, self.cfg.loss.task_weights)?;
        let value = g.value(loss).item();
        let grads = g.backward(loss)?;
        let gs = bound
            .vars()
            .into_iter()
            .zip(&self.mask)
            .filter(|(_, &on)| on)
            .map(|(v, _)| {
                grads
                    .wrt(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros_like(g.value(v)))
            })
            .collect();
        Ok(Some((value, gs)))
    }

    /// One optimizer update from the mean gradient over `windows`. Returns the
    /// mean loss, or `None` (and leaves `params` alone) when no window has a
    /// label for a trained task.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        windows: &[&ContextWindow],
    ) -> Result<Option<f64>> {
        let mut total = 0.0;
        let mut sum: Option<Vec<Tensor>> = None;
        let mut n = 0usize;
        for w in windows {
            let Some((loss, gs)) = self.gradients(params, w)? else {
                continue;
            };
            total += loss;
            n += 1;
            match &mut sum {
                None => sum = Some(gs),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&gs) {
                        a.add_assign(g);
                    }
                }
            }
        }
        let Some(mut gs) = sum else { return Ok(None) };
        if n > 1 {
            let scale = 1.0 / n as f64;
            for g in &mut gs {
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
            }
        }
        let refs: Vec<&Tensor> = gs.iter().collect();
        let mut ps: Vec<&mut Tensor> = params
            .tensors_mut()
            .into_iter()
            .zip(&self.mask)
            .filter(|(_, &on)| on)
            .map(|(p, _)| p)
            .collect();
        self.cfg
            .optimizer
            .step(&mut ps, &refs, &self.names, &mut self.state)?;
        Ok(Some(total / n as f64))
    }
}

/// Metrics logged after each epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_therapist_macro_f1: Option<f64>,
    pub val_client_macro_f1: Option<f64>,
    /// The value compared for model selection.
    pub val_selection: f64,
}

/// Result of training on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub split: usize,
    pub variant: Variant,
    pub epochs: Vec<EpochLog>,
    pub selected_epoch: usize,
    pub val: EvalReport,
    pub test: EvalReport,
    pub test_sessions: Vec<String>,
    /// Kept out of the serialized record so reports are reproducible.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug)]
pub struct FoldRun {
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
}

/// Macro F1 used for checkpoint selection: the mean over both tasks for the
/// joint variants, the task's own score for single-task variants.
pub fn selection_metric(report: &EvalReport, variant: Variant) -> f64 {
    match variant {
        Variant::SingleTaskT => report.therapist.as_ref().map_or(0.0, |t| t.macro_f1),
        Variant::SingleTaskC => report.client.as_ref().map_or(0.0, |t| t.macro_f1),
        Variant::Full | Variant::NoContext => report.combined_macro_f1(),
    }
}

/// Trains from scratch on `split`, keeping the epoch with the best validation
/// score (earliest on ties), and scores that checkpoint on the test sessions.
/// Validation and test always use the `f32`-rounded weights that a saved
/// checkpoint holds.
pub fn train_fold(
    ds: &Dataset,
    split_index: usize,
    split: &Split,
    cfg: &TrainConfig,
) -> Result<FoldRun> {
    cfg.validate()?;
    let start = Instant::now();
    let m = &cfg.model;
    let train = ds.prepare(&split.train, m, StrideMode::Train)?;
    if train.windows.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let val = ds.prepare(&split.val, m, StrideMode::Train)?;
    let test = ds.prepare(&split.test, m, StrideMode::Train)?;

    let mut params = init_params(m, cfg.seed)?;
    let mut trainer = Trainer::new(cfg, &params, &train);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..train.windows.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ModelParams, EvalReport)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut steps) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ContextWindow> = chunk.iter().map(|&i| &train.windows[i]).collect();
            if let Some(l) = trainer.step(&mut params, &batch)? {
                total += l;
                steps += 1;
            }
        }
        let snapshot = params.rounded_to_f32();
        let report = evaluate(&snapshot, &val, m, false)?;
        let score = selection_metric(&report, m.variant);
        log::debug!(
            "split {split_index} epoch {epoch}: loss {:.5} val {score:.4}",
            total / steps.max(1) as f64
        );
        epochs.push(EpochLog {
            epoch,
            train_loss: if steps == 0 {
                0.0
            } else {
                total / steps as f64
            },
            val_therapist_macro_f1: report.therapist.as_ref().map(|t| t.macro_f1),
            val_client_macro_f1: report.client.as_ref().map(|t| t.macro_f1),
            val_selection: score,
        });
        if best.as_ref().is_none_or(|b| score > b.1) {
            best = Some((epoch, score, snapshot, report));
        }
    }

    let (selected_epoch, score, best_params, val_report) = best.expect("at least one epoch");
    let test_report = evaluate(&best_params, &test, m, false)?;
    let checkpoint = Checkpoint::new(
        m.clone(),
        &best_params,
        cfg.seed,
        selected_epoch,
        score,
        split.test.clone(),
    );
    Ok(FoldRun {
        record: RunRecord {
            split: split_index,
            variant: m.variant,
            epochs,
            selected_epoch,
            val: val_report,
            test: test_report,
            test_sessions: split.test.clone(),
            wall_clock_secs: start.elapsed().as_secs_f64(),
        },
        checkpoint,
    })
}

/// Scores a checkpoint on the last position of online windows: each target
/// sees only itself and earlier utterances.
pub fn online_evaluate(
    ds: &Dataset,
    checkpoint: &Checkpoint,
    sessions: &[String],
    par: bool,
) -> Result<EvalReport> {
    let cfg = &checkpoint.meta.config;
    let data = ds.prepare(sessions, cfg, StrideMode::Online)?;
    evaluate(&checkpoint.params, &data, cfg, par)
}
