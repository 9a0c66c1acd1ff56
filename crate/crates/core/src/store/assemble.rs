use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{Role, Scoring, WindowSpec};
use crate::error::{Error, Result};

use super::{EmbeddingStore, StoreMeta};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Both,
    TextOnly,
    AudioOnly,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Both, Modality::TextOnly, Modality::AudioOnly];

    pub fn width(self, meta: &StoreMeta) -> usize {
        match self {
            Modality::Both => meta.d_audio + meta.d_text,
            Modality::TextOnly => meta.d_text,
            Modality::AudioOnly => meta.d_audio,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Both => "both",
            Modality::TextOnly => "text_only",
            Modality::AudioOnly => "audio_only",
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown modality {s:?}")))
    }
}

/// `k` therapist rows and `k` client rows with labels. Padding rows are zero
/// and carry no label.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextWindow {
    pub k: usize,
    pub width: usize,
    pub session_id: String,
    pub therapist_rows: Tensor,
    pub client_rows: Tensor,
    pub therapist_labels: Vec<Option<usize>>,
    pub client_labels: Vec<Option<usize>>,
    pub scoring: Scoring,
}

impl ContextWindow {
    pub fn rows(&self, role: Role) -> &Tensor {
        match role {
            Role::Therapist => &self.therapist_rows,
            Role::Client => &self.client_rows,
        }
    }

    pub fn labels(&self, role: Role) -> &[Option<usize>] {
        match role {
            Role::Therapist => &self.therapist_labels,
            Role::Client => &self.client_labels,
        }
    }

    /// 1 for real utterances, 0 for padding.
    pub fn pad_mask(&self, role: Role) -> Vec<u8> {
        self.labels(role)
            .iter()
            .map(|l| l.is_some() as u8)
            .collect()
    }

    /// Key mask over the stacked `[therapist; client]` rows.
    pub fn key_mask(&self) -> Vec<bool> {
        self.therapist_labels
            .iter()
            .chain(&self.client_labels)
            .map(Option::is_some)
            .collect()
    }

    pub fn scored_positions(&self, role: Role) -> Vec<usize> {
        let labels = self.labels(role);
        match self.scoring {
            Scoring::All => (0..self.k).filter(|&p| labels[p].is_some()).collect(),
            Scoring::Last => {
                if labels[self.k - 1].is_some() {
                    vec![self.k - 1]
                } else {
                    vec![]
                }
            }
        }
    }
}

/// Attaches embeddings to a window layout. `Both` rows are the audio vector
/// followed by the text vector.
pub fn assemble_rows(
    store: &EmbeddingStore,
    spec: &WindowSpec,
    modality: Modality,
) -> Result<ContextWindow> {
    let meta = store.meta();
    let width = modality.width(meta);
    let mut missing = Vec::new();
    let mut fill = |role: Role| -> (Tensor, Vec<Option<usize>>) {
        let slots = spec.slots(role);
        let mut data = vec![0.0; spec.k * width];
        let mut labels = vec![None; spec.k];
        for (p, slot) in slots.iter().enumerate() {
            let Some(slot) = slot else { continue };
            let Some(row) = store.row_of(&slot.key) else {
                missing.push(slot.key.to_string());
                continue;
            };
            let dst = &mut data[p * width..(p + 1) * width];
            let (audio, text) = (store.audio_row(row), store.text_row(row));
            let src: Box<dyn Iterator<Item = &f32>> = match modality {
                Modality::Both => Box::new(audio.iter().chain(text)),
                Modality::TextOnly => Box::new(text.iter()),
                Modality::AudioOnly => Box::new(audio.iter()),
            };
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = f64::from(s);
            }
            labels[p] = Some(slot.label);
        }
        let rows = Tensor::from_rows(spec.k, width, data).expect("window shape");
        (rows, labels)
    };
    let (therapist_rows, therapist_labels) = fill(Role::Therapist);
    let (client_rows, client_labels) = fill(Role::Client);
    if !missing.is_empty() {
        return Err(Error::MissingUtterances(missing));
    }
    Ok(ContextWindow {
        k: spec.k,
        width,
        session_id: spec.session_id.clone(),
        therapist_rows,
        client_rows,
        therapist_labels,
        client_labels,
        scoring: spec.scoring,
    })
}

pub fn assemble_all(
    store: &EmbeddingStore,
    specs: &[WindowSpec],
    modality: Modality,
) -> Result<Vec<ContextWindow>> {
    specs
        .iter()
        .map(|s| assemble_rows(store, s, modality))
        .collect()
}
