//! Shared self-attention over stacked therapist/client rows with two task
//! heads, plus its ablation variants and checkpoint format.

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_META, CHECKPOINT_PARAMS};
pub use config::{ModelConfig, Variant};
pub use forward::{forward, infer, predict, ForwardOutput};
pub use params::{init_params, BoundParams, Linear, ModelParams, ParamSpec};
