use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Role, Session, UtteranceKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrideMode {
    /// Consecutive non-overlapping blocks of `k` per role; every position is scored.
    Train,
    /// One past-only window per role index, scored at its last position only.
    Online,
}

/// Which positions of a window contribute predictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scoring {
    All,
    Last,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub key: UtteranceKey,
    pub label: usize,
}

/// Utterance layout of one context window before embeddings are attached.
/// `None` slots are padding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub k: usize,
    pub session_id: String,
    pub therapist: Vec<Option<Slot>>,
    pub client: Vec<Option<Slot>>,
    pub scoring: Scoring,
}

impl WindowSpec {
    pub fn slots(&self, role: Role) -> &[Option<Slot>] {
        match role {
            Role::Therapist => &self.therapist,
            Role::Client => &self.client,
        }
    }

    /// 1 for real utterances, 0 for padding.
    pub fn pad_mask(&self, role: Role) -> Vec<u8> {
        self.slots(role).iter().map(|s| s.is_some() as u8).collect()
    }

    /// Positions whose predictions are scored.
    pub fn scored_positions(&self, role: Role) -> Vec<usize> {
        let slots = self.slots(role);
        match self.scoring {
            Scoring::All => (0..slots.len()).filter(|&p| slots[p].is_some()).collect(),
            Scoring::Last => {
                let last = slots.len() - 1;
                if slots[last].is_some() {
                    vec![last]
                } else {
                    vec![]
                }
            }
        }
    }
}

/// Cuts a session into context windows. The therapist and client utterance
/// lists are windowed independently by their position within the role.
pub fn build_windows(session: &Session, k: usize, mode: StrideMode) -> Result<Vec<WindowSpec>> {
    if k == 0 {
        return Err(Error::Config("context size k must be >= 1".into()));
    }
    let lists: Vec<Vec<Slot>> = Role::BOTH
        .iter()
        .map(|&r| {
            session
                .by_role(r)
                .into_iter()
                .map(|u| Slot {
                    key: u.key(),
                    label: u.label,
                })
                .collect()
        })
        .collect();
    if lists.iter().any(Vec::is_empty) {
        return Err(Error::EmptyRole(session.session_id.clone()));
    }
    let longest = lists.iter().map(Vec::len).max().unwrap_or(0);

    // window `start` covers role indices start..start + k
    let window = |start: isize, scoring: Scoring| {
        let take = |list: &Vec<Slot>| -> Vec<Option<Slot>> {
            (0..k as isize)
                .map(|p| {
                    let idx = start + p;
                    (idx >= 0)
                        .then(|| list.get(idx as usize).cloned())
                        .flatten()
                })
                .collect()
        };
        WindowSpec {
            k,
            session_id: session.session_id.clone(),
            therapist: take(&lists[0]),
            client: take(&lists[1]),
            scoring,
        }
    };

    Ok(match mode {
        StrideMode::Train => (0..longest.div_ceil(k))
            .map(|b| window((b * k) as isize, Scoring::All))
            .collect(),
        StrideMode::Online => (0..longest)
            .map(|i| window(i as isize + 1 - k as isize, Scoring::Last))
            .collect(),
    })
}

/// Windows for many sessions. Sessions lacking one role are skipped and
/// reported by id.
pub fn build_all_windows<'a>(
    sessions: impl IntoIterator<Item = &'a Session>,
    k: usize,
    mode: StrideMode,
) -> Result<(Vec<WindowSpec>, Vec<String>)> {
    let mut windows = Vec::new();
    let mut skipped = Vec::new();
    for s in sessions {
        match build_windows(s, k, mode) {
            Ok(w) => windows.extend(w),
            Err(Error::EmptyRole(id)) => {
                log::warn!("skipping session {id}: one role has no utterances");
                skipped.push(id);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((windows, skipped))
}
