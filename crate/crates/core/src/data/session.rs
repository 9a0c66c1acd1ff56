use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Role;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AudioSpan {
    pub start_ms: u64,
    pub end_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub session_id: String,
    /// Chronological position within the session.
    pub seq_index: u32,
    pub role: Role,
    pub text: String,
    pub audio: Option<AudioSpan>,
    /// Class index into `role.classes()`.
    pub label: usize,
}

impl Utterance {
    pub fn new(
        session_id: impl Into<String>,
        seq_index: u32,
        role: Role,
        text: impl Into<String>,
        audio: Option<AudioSpan>,
        label: usize,
    ) -> Result<Self> {
        let u = Utterance {
            session_id: session_id.into(),
            seq_index,
            role,
            text: text.into(),
            audio,
            label,
        };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<()> {
        self.role.label_name(self.label)?;
        if let Some(span) = self.audio {
            if span.start_ms >= span.end_ms {
                return Err(Error::InvalidUtterance(format!(
                    "{}#{}: start_ms {} >= end_ms {}",
                    self.session_id, self.seq_index, span.start_ms, span.end_ms
                )));
            }
        }
        Ok(())
    }

    pub fn key(&self) -> UtteranceKey {
        UtteranceKey {
            session_id: self.session_id.clone(),
            role: self.role,
            seq_index: self.seq_index,
        }
    }
}

/// Identifies an utterance across sessions and stores.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UtteranceKey {
    pub session_id: String,
    pub role: Role,
    pub seq_index: u32,
}

impl std::fmt::Display for UtteranceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.session_id, self.role, self.seq_index)
    }
}

/// One recorded conversation (one video in the reference corpus).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    utterances: Vec<Utterance>,
    pub source: Option<String>,
}

impl Session {
    /// Builds a session, ordering utterances by `seq_index`.
    pub fn new(
        session_id: impl Into<String>,
        mut utterances: Vec<Utterance>,
        source: Option<String>,
    ) -> Result<Self> {
        let session_id = session_id.into();
        utterances.sort_by_key(|u| u.seq_index);
        for u in &utterances {
            if u.session_id != session_id {
                return Err(Error::InvalidUtterance(format!(
                    "utterance of session {} filed under {session_id}",
                    u.session_id
                )));
            }
            u.validate()?;
        }
        if let Some(w) = utterances
            .windows(2)
            .find(|w| w[0].seq_index == w[1].seq_index)
        {
            return Err(Error::InvalidUtterance(format!(
                "{session_id}: duplicate seq_index {}",
                w[0].seq_index
            )));
        }
        Ok(Session {
            session_id,
            utterances,
            source,
        })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Utterances of one role in chronological order.
    pub fn by_role(&self, role: Role) -> Vec<&Utterance> {
        self.utterances.iter().filter(|u| u.role == role).collect()
    }
}

/// Empirical label distribution of `role` over `utterances`.
pub fn class_priors<'a>(
    utterances: impl IntoIterator<Item = &'a Utterance>,
    role: Role,
) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; role.n_classes()];
    for u in utterances.into_iter().filter(|u| u.role == role) {
        counts[u.label] += 1;
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Config(format!(
            "no {role} utterances to estimate priors"
        )));
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}
