use serde::{Deserialize, Serialize};

use crate::data::Role;
use crate::error::{Error, Result};
use crate::store::{Modality, DEFAULT_AUDIO_DIM, DEFAULT_TEXT_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Shared attention, both heads.
    Full,
    /// Shared attention, therapist head only.
    SingleTaskT,
    /// Shared attention, client head only.
    SingleTaskC,
    /// Per-row value projection instead of attention, both heads.
    NoContext,
}

impl Variant {
    pub fn trains(self, role: Role) -> bool {
        !matches!(
            (self, role),
            (Variant::SingleTaskT, Role::Client) | (Variant::SingleTaskC, Role::Therapist)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SingleTaskT => "single_task_t",
            Variant::SingleTaskC => "single_task_c",
            Variant::NoContext => "no_context",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Variant::Full,
            Variant::SingleTaskT,
            Variant::SingleTaskC,
            Variant::NoContext,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Utterances per role in a window.
    pub k: usize,
    pub input_width: usize,
    pub attn_width: usize,
    /// Hidden widths of each task head; a final layer maps to the class count.
    pub head_hidden: Vec<usize>,
    pub n_therapist: usize,
    pub n_client: usize,
    pub variant: Variant,
    pub modality: Modality,
    pub use_positional: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k: 10,
            input_width: DEFAULT_TEXT_DIM + DEFAULT_AUDIO_DIM,
            attn_width: 1024,
            head_hidden: vec![512, 256],
            n_therapist: Role::Therapist.n_classes(),
            n_client: Role::Client.n_classes(),
            variant: Variant::Full,
            modality: Modality::Both,
            use_positional: true,
        }
    }
}

impl ModelConfig {
    /// Small widths for CPU-sized experiments on synthetic stores.
    pub fn desk(k: usize, input_width: usize) -> Self {
        ModelConfig {
            k,
            input_width,
            attn_width: 32,
            head_hidden: vec![32, 16],
            ..ModelConfig::default()
        }
    }

    pub fn n_classes(&self, role: Role) -> usize {
        match role {
            Role::Therapist => self.n_therapist,
            Role::Client => self.n_client,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.input_width == 0 || self.attn_width == 0 {
            return Err(Error::Config(
                "k, input_width and attn_width must be positive".into(),
            ));
        }
        if self.head_hidden.contains(&0) {
            return Err(Error::Config("head widths must be positive".into()));
        }
        for role in Role::BOTH {
            if self.n_classes(role) != role.n_classes() {
                return Err(Error::Config(format!(
                    "{role} head has {} classes, label set has {}",
                    self.n_classes(role),
                    role.n_classes()
                )));
            }
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each head layer.
    pub fn head_layers(&self, role: Role) -> Vec<(usize, usize)> {
        let mut dims = vec![self.attn_width];
        dims.extend(&self.head_hidden);
        dims.push(self.n_classes(role));
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}
