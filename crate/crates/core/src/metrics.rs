//! Confusion matrices, per-class and macro F1, and the proportional random
//! baseline.

use std::fmt::Write as _;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Role;
use crate::error::{Error, Result};

/// Scores for one classification task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub classes: Vec<String>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    pub macro_f1: f64,
    pub count: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl TaskReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let n = confusion.len();
        let mut precision = Vec::with_capacity(n);
        let mut recall = Vec::with_capacity(n);
        let mut f1 = Vec::with_capacity(n);
        let mut support = Vec::with_capacity(n);
        for c in 0..n {
            let tp = confusion[c][c];
            let actual: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            let (p, r) = (ratio(tp, predicted), ratio(tp, actual));
            precision.push(p);
            recall.push(r);
            f1.push(f1_of(p, r));
            support.push(actual);
        }
        TaskReport {
            classes: (0..n).map(|c| c.to_string()).collect(),
            count: support.iter().sum(),
            macro_f1: mean(&f1),
            confusion,
            precision,
            recall,
            f1,
            support,
        }
    }

    pub fn named(mut self, role: Role) -> Self {
        self.classes = role.classes().iter().map(|s| s.to_string()).collect();
        self
    }
}

/// Per-class F1 (0 when precision + recall is 0) and their unweighted mean.
pub fn f1_report(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<TaskReport> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::CountMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(Error::Config(format!("class index outside 0..{n_classes}")));
        }
        confusion[l][p] += 1;
    }
    Ok(TaskReport::from_confusion(confusion))
}

/// Scores i.i.d. predictions drawn from `priors`, averaged over `n_trials`.
/// The confusion matrix is summed over trials.
pub fn random_baseline(
    labels: &[usize],
    priors: &[f64],
    seed: u64,
    n_trials: usize,
) -> Result<TaskReport> {
    let total: f64 = priors.iter().sum();
    if (total - 1.0).abs() > 1e-6 || priors.iter().any(|&p| p < 0.0) {
        return Err(Error::Config(format!(
            "priors must be a distribution: {priors:?}"
        )));
    }
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be >= 1".into()));
    }
    let n = priors.len();
    let dist = WeightedIndex::new(priors).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum_conf = vec![vec![0u64; n]; n];
    let (mut p, mut r, mut f) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for _ in 0..n_trials {
        let preds: Vec<usize> = labels.iter().map(|_| dist.sample(&mut rng)).collect();
        let rep = f1_report(&preds, labels, n)?;
        for c in 0..n {
            p[c] += rep.precision[c] / n_trials as f64;
            r[c] += rep.recall[c] / n_trials as f64;
            f[c] += rep.f1[c] / n_trials as f64;
            for j in 0..n {
                sum_conf[c][j] += rep.confusion[c][j];
            }
        }
    }
    let mut out = TaskReport::from_confusion(sum_conf);
    out.precision = p;
    out.recall = r;
    out.macro_f1 = mean(&f);
    out.f1 = f;
    Ok(out)
}

/// Reports for both tasks; a task is `None` when the variant does not train it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub therapist: Option<TaskReport>,
    pub client: Option<TaskReport>,
}

impl EvalReport {
    pub fn task(&self, role: Role) -> Option<&TaskReport> {
        match role {
            Role::Therapist => self.therapist.as_ref(),
            Role::Client => self.client.as_ref(),
        }
    }

    /// Mean macro F1 over the tasks present.
    pub fn combined_macro_f1(&self) -> f64 {
        let present: Vec<f64> = [&self.therapist, &self.client]
            .into_iter()
            .flatten()
            .map(|t| t.macro_f1)
            .collect();
        if present.is_empty() {
            0.0
        } else {
            mean(&present)
        }
    }

    /// `task,class,precision,recall,f1,support` with one macro row per task.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,class,precision,recall,f1,support\n");
        for role in Role::BOTH {
            let Some(t) = self.task(role) else { continue };
            for c in 0..t.f1.len() {
                let _ = writeln!(
                    out,
                    "{role},{},{:.6},{:.6},{:.6},{}",
                    t.classes[c], t.precision[c], t.recall[c], t.f1[c], t.support[c]
                );
            }
            let _ = writeln!(out, "{role},macro,,,{:.6},{}", t.macro_f1, t.count);
        }
        out
    }
}

/// Mean and sample standard deviation of F1 over folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateTask {
    pub classes: Vec<String>,
    pub f1_mean: Vec<f64>,
    pub f1_std: Vec<f64>,
    pub macro_mean: f64,
    pub macro_std: f64,
    pub folds: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub therapist: Option<AggregateTask>,
    pub client: Option<AggregateTask>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

impl AggregateReport {
    pub fn from_reports(reports: &[EvalReport]) -> Self {
        let agg = |role: Role| -> Option<AggregateTask> {
            let tasks: Vec<&TaskReport> = reports.iter().filter_map(|r| r.task(role)).collect();
            let first = tasks.first()?;
            let n = first.f1.len();
            let per_class: Vec<(f64, f64)> = (0..n)
                .map(|c| mean_std(&tasks.iter().map(|t| t.f1[c]).collect::<Vec<_>>()))
                .collect();
            let (macro_mean, macro_std) =
                mean_std(&tasks.iter().map(|t| t.macro_f1).collect::<Vec<_>>());
            Some(AggregateTask {
                classes: first.classes.clone(),
                f1_mean: per_class.iter().map(|x| x.0).collect(),
                f1_std: per_class.iter().map(|x| x.1).collect(),
                macro_mean,
                macro_std,
                folds: tasks.len(),
            })
        };
        AggregateReport {
            therapist: agg(Role::Therapist),
            client: agg(Role::Client),
        }
    }

    pub fn task(&self, role: Role) -> Option<&AggregateTask> {
        match role {
            Role::Therapist => self.therapist.as_ref(),
            Role::Client => self.client.as_ref(),
        }
    }

    pub fn combined_macro_f1(&self) -> f64 {
        let present: Vec<f64> = [&self.therapist, &self.client]
            .into_iter()
            .flatten()
            .map(|t| t.macro_mean)
            .collect();
        if present.is_empty() {
            0.0
        } else {
            mean(&present)
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,class,f1_mean,f1_std\n");
        for role in Role::BOTH {
            let Some(t) = self.task(role) else { continue };
            for c in 0..t.f1_mean.len() {
                let _ = writeln!(
                    out,
                    "{role},{},{:.6},{:.6}",
                    t.classes[c], t.f1_mean[c], t.f1_std[c]
                );
            }
            let _ = writeln!(out, "{role},macro,{:.6},{:.6}", t.macro_mean, t.macro_std);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 2, 1];
        let r = f1_report(&labels, &labels, 3).unwrap();
        assert_eq!(r.f1, vec![1.0; 3]);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn majority_guess_by_hand() {
        // 60% class 0, 40% class 1, always predict 0: P=0.6, R=1 -> F1=0.75
        let labels: Vec<usize> = (0..10).map(|i| usize::from(i >= 6)).collect();
        let r = f1_report(&[0; 10], &labels, 2).unwrap();
        assert!((r.f1[0] - 0.75).abs() < 1e-15);
        assert_eq!(r.f1[1], 0.0);
        assert!((r.macro_f1 - 0.375).abs() < 1e-15);
        assert_eq!(r.confusion, vec![vec![6, 0], vec![4, 0]]);
    }

    #[test]
    fn absent_class_scores_zero() {
        let r = f1_report(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(r.f1[2], 0.0);
        assert!((r.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(f1_report(&[0], &[0, 1], 2).is_err());
        assert!(f1_report(&[], &[], 2).is_err());
    }

    #[test]
    fn one_class_baseline_is_perfect() {
        let r = random_baseline(&[0; 50], &[1.0, 0.0], 1, 3).unwrap();
        assert_eq!(r.f1[0], 1.0);
        assert!(random_baseline(&[0], &[0.5, 0.6], 1, 1).is_err());
    }

    #[test]
    fn csv_has_macro_rows() {
        let t = f1_report(&[0, 1], &[0, 1], 2).unwrap().named(Role::Client);
        let rep = EvalReport {
            therapist: None,
            client: Some(t),
        };
        let csv = rep.to_csv();
        assert!(csv.contains("client,change,1.000000"));
        assert!(csv.lines().last().unwrap().starts_with("client,macro,,,"));
    }

    #[test]
    fn aggregate_mean_and_std() {
        let a = f1_report(&[0, 1], &[0, 1], 2).unwrap();
        let b = f1_report(&[0, 0], &[0, 1], 2).unwrap();
        let agg = AggregateReport::from_reports(&[
            EvalReport {
                therapist: None,
                client: Some(a.clone()),
            },
            EvalReport {
                therapist: None,
                client: Some(b.clone()),
            },
        ]);
        let c = agg.client.unwrap();
        assert_eq!(c.macro_mean, (a.macro_f1 + b.macro_f1) / 2.0);
        assert!((c.macro_std - (a.macro_f1 - b.macro_f1).abs() / 2f64.sqrt()).abs() < 1e-12);
        assert!(agg.therapist.is_none());
    }

    proptest! {
        #[test]
        fn report_invariants(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
            let (p, l): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let r = f1_report(&p, &l, 4).unwrap();
            let total: u64 = r.confusion.iter().flatten().sum();
            prop_assert_eq!(total, l.len() as u64);
            prop_assert!(r.f1.iter().all(|f| (0.0..=1.0).contains(f)));
            prop_assert_eq!(r.macro_f1, r.f1.iter().sum::<f64>() / 4.0);
        }
    }
}
