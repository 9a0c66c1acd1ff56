use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Session;

/// Train/validation/test session sets of one cross-validation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub test_fold: usize,
    pub val_fold: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Session-level fold assignment. Split `i` tests on fold `i`, validates on
/// fold `(i + 1) % n_folds` and trains on the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub assignment: BTreeMap<String, usize>,
    pub splits: Vec<Split>,
}

pub fn make_folds(sessions: &[Session], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 3 {
        return Err(Error::Config(format!(
            "need at least 3 folds for train/val/test, got {n_folds}"
        )));
    }
    if sessions.len() < n_folds {
        return Err(Error::TooFewSessions {
            needed: n_folds,
            have: sessions.len(),
            n_folds,
        });
    }
    let mut order: Vec<(&str, usize)> = sessions
        .iter()
        .map(|s| (s.session_id.as_str(), s.len()))
        .collect();
    order.sort_by(|a, b| a.0.cmp(b.0));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    // stable: equal sizes keep their shuffled order
    order.sort_by(|a, b| b.1.cmp(&a.1));

    let mut load = vec![(0usize, 0usize); n_folds];
    let mut assignment = BTreeMap::new();
    for (id, size) in order {
        let fold = (0..n_folds)
            .min_by_key(|&f| (load[f].0, load[f].1, f))
            .expect("n_folds > 0");
        load[fold].0 += size;
        load[fold].1 += 1;
        if assignment.insert(id.to_string(), fold).is_some() {
            return Err(Error::InvalidUtterance(format!(
                "duplicate session id {id}"
            )));
        }
    }

    let members = |fold: usize| -> Vec<String> {
        assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.clone())
            .collect()
    };
    let splits = (0..n_folds)
        .map(|test_fold| {
            let val_fold = (test_fold + 1) % n_folds;
            let train = (0..n_folds)
                .filter(|&f| f != test_fold && f != val_fold)
                .flat_map(members)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            Split {
                test_fold,
                val_fold,
                train,
                val: members(val_fold),
                test: members(test_fold),
            }
        })
        .collect();

    Ok(FoldPlan {
        n_folds,
        assignment,
        splits,
    })
}

impl FoldPlan {
    /// Sessions that occur in more than one of train/val/test within a split.
    pub fn leaks(&self) -> Vec<String> {
        let mut leaked = BTreeSet::new();
        for split in &self.splits {
            let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
            for s in split.train.iter().chain(&split.val).chain(&split.test) {
                *seen.entry(s.as_str()).or_default() += 1;
            }
            leaked.extend(
                seen.into_iter()
                    .filter(|(_, n)| *n > 1)
                    .map(|(s, _)| s.to_string()),
            );
        }
        leaked.into_iter().collect()
    }

    /// Checks that every split is leak-free and covers exactly `session_ids`.
    pub fn validate<'a>(&self, session_ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let leaked = self.leaks();
        if !leaked.is_empty() {
            return Err(Error::SessionLeak(leaked));
        }
        let all: BTreeSet<&str> = session_ids.into_iter().collect();
        for (i, split) in self.splits.iter().enumerate() {
            let covered: BTreeSet<&str> = split
                .train
                .iter()
                .chain(&split.val)
                .chain(&split.test)
                .map(String::as_str)
                .collect();
            if covered != all {
                let diff: Vec<_> = all.symmetric_difference(&covered).collect();
                return Err(Error::CountMismatch(format!(
                    "split {i} does not cover the session set exactly: {diff:?}"
                )));
            }
        }
        Ok(())
    }
}
