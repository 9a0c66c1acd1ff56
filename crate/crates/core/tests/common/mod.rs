#![allow(dead_code)]

use m3tcm::harness::{Dataset, TrainConfig};
use m3tcm::model::{ModelConfig, Variant};
use m3tcm::store::{synth_generate, SynthConfig, SynthData};

pub fn synth(cfg: SynthConfig) -> (Dataset, SynthData) {
    let data = synth_generate(&cfg).unwrap();
    (Dataset::new(data.store.clone()).unwrap(), data)
}

/// A handful of short sessions; enough to exercise every code path quickly.
pub fn tiny() -> (Dataset, SynthData) {
    synth(SynthConfig {
        n_sessions: 10,
        utterances_per_role: 8,
        d_text: 4,
        d_audio: 2,
        seed: 5,
        ..SynthConfig::default()
    })
}

pub fn train_cfg(ds: &Dataset, k: usize, variant: Variant, epochs: usize) -> TrainConfig {
    let meta = ds.store.meta();
    let mut model = ModelConfig::desk(k, meta.d_audio + meta.d_text);
    model.attn_width = 8;
    model.head_hidden = vec![8];
    model.variant = variant;
    let mut cfg = TrainConfig {
        epochs,
        seed: 3,
        model,
        ..TrainConfig::default()
    };
    cfg.optimizer.lr = 3e-3;
    cfg
}
