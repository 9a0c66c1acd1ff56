use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::store::{read_blob, read_file, write_file};

use super::{init_params, ModelConfig, ModelParams, ParamSpec};

pub const CHECKPOINT_META: &str = "meta.json";
pub const CHECKPOINT_PARAMS: &str = "params.f32";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    pub val_macro_f1: f64,
    pub params: Vec<ParamSpec>,
    #[serde(default)]
    pub test_sessions: Vec<String>,
}

/// Model parameters plus the metadata needed to rebuild and re-evaluate them.
/// Parameters are stored as little-endian `f32` in declared order, so the
/// in-memory values are always `f32`-representable.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(
        config: ModelConfig,
        params: &ModelParams,
        seed: u64,
        epoch: usize,
        val_macro_f1: f64,
        test_sessions: Vec<String>,
    ) -> Self {
        let params = params.rounded_to_f32();
        Checkpoint {
            meta: CheckpointMeta {
                format_version: 1,
                config,
                seed,
                epoch,
                val_macro_f1,
                params: params.layout(),
                test_sessions,
            },
            params,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        write_file(&dir.join(CHECKPOINT_META), meta.as_bytes())?;
        let bytes: Vec<u8> = self
            .params
            .tensors()
            .iter()
            .flat_map(|t| t.data().iter())
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        write_file(&dir.join(CHECKPOINT_PARAMS), &bytes)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(CHECKPOINT_META);
        let meta: CheckpointMeta = serde_json::from_slice(&read_file(&meta_path)?)
            .map_err(|e| Error::json(&meta_path, e))?;
        let mut params = init_params(&meta.config, 0)?;
        if params.layout() != meta.params {
            return Err(Error::CountMismatch(format!(
                "checkpoint layout does not match its config in {}",
                dir.display()
            )));
        }
        let n = params.n_scalars();
        let flat = read_blob(&dir.join(CHECKPOINT_PARAMS), n)?;
        let mut offset = 0;
        for t in params.tensors_mut() {
            let len = t.numel();
            let data = flat[offset..offset + len]
                .iter()
                .map(|&v| f64::from(v))
                .collect();
            *t = Tensor::new(t.shape().to_vec(), data)?;
            offset += len;
        }
        Ok(Checkpoint { meta, params })
    }
}
