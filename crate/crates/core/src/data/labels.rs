use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Therapist,
    Client,
}

/// Therapist behaviour classes, in report order.
pub const THERAPIST_CLASSES: [&str; 4] = ["reflection", "question", "therapist_input", "other"];
/// Client talk types, in report order.
pub const CLIENT_CLASSES: [&str; 3] = ["change", "neutral", "sustain"];

/// Therapist class priors (reflection, question, input, other) in the
/// harmonized reference corpus.
pub const THERAPIST_PRIORS: [f64; 4] = [0.25, 0.29, 0.15, 0.31];
/// Client class priors (change, neutral, sustain).
pub const CLIENT_PRIORS: [f64; 3] = [0.25, 0.63, 0.12];

impl Role {
    pub const BOTH: [Role; 2] = [Role::Therapist, Role::Client];

    pub fn classes(self) -> &'static [&'static str] {
        match self {
            Role::Therapist => &THERAPIST_CLASSES,
            Role::Client => &CLIENT_CLASSES,
        }
    }

    pub fn n_classes(self) -> usize {
        self.classes().len()
    }

    pub fn priors(self) -> &'static [f64] {
        match self {
            Role::Therapist => &THERAPIST_PRIORS,
            Role::Client => &CLIENT_PRIORS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Therapist => "therapist",
            Role::Client => "client",
        }
    }

    pub fn label_index(self, name: &str) -> Result<usize> {
        self.classes()
            .iter()
            .position(|&c| c == name)
            .ok_or_else(|| Error::InvalidLabel {
                role: self.as_str().into(),
                label: name.into(),
            })
    }

    pub fn label_name(self, index: usize) -> Result<&'static str> {
        self.classes()
            .get(index)
            .copied()
            .ok_or_else(|| Error::InvalidLabel {
                role: self.as_str().into(),
                label: index.to_string(),
            })
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Collapses multiple annotations of one utterance into its most frequent
/// label. Ties go to the alphabetically first label name.
pub fn harmonize<S: AsRef<str>>(annotations: &[S]) -> Result<&str> {
    let mut names: Vec<&str> = annotations.iter().map(AsRef::as_ref).collect();
    if names.is_empty() {
        return Err(Error::NoAnnotations);
    }
    names.sort_unstable();
    let mut best = (names[0], 0usize);
    let mut i = 0;
    while i < names.len() {
        let run = names[i..].iter().take_while(|&&n| n == names[i]).count();
        if run > best.1 {
            best = (names[i], run);
        }
        i += run;
    }
    Ok(best.0)
}
