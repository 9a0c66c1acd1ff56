use serde::{Deserialize, Serialize};

use crate::data::{FoldPlan, Role};
use crate::error::{Error, Result};
use crate::metrics::{AggregateReport, EvalReport};
use crate::model::Variant;
use crate::parallel;
use crate::store::Modality;

use super::train::{online_evaluate, train_fold, Dataset, FoldRun, TrainConfig};

/// Cross-validation over the selected splits of one fold plan.
#[derive(Clone, Debug)]
pub struct CvResult {
    pub plan: FoldPlan,
    pub runs: Vec<FoldRun>,
    pub aggregate: AggregateReport,
}

impl CvResult {
    pub fn test_reports(&self) -> Vec<EvalReport> {
        self.runs.iter().map(|r| r.record.test.clone()).collect()
    }

    /// Scores every split's selected checkpoint on online windows over that
    /// split's test sessions.
    pub fn online(&self, ds: &Dataset, par: bool) -> Result<AggregateReport> {
        let reports = parallel::try_map(&self.runs, par, |r| {
            online_evaluate(
                ds,
                &r.checkpoint,
                &self.plan.splits[r.record.split].test,
                false,
            )
        })?;
        Ok(AggregateReport::from_reports(&reports))
    }
}

/// Refuses plans where any session lands in more than one role of a split.
pub fn audit_plan(plan: &FoldPlan, ds: &Dataset) -> Result<()> {
    plan.validate(ds.sessions.iter().map(|s| s.session_id.as_str()))
}

pub fn cross_validate(ds: &Dataset, cfg: &TrainConfig) -> Result<CvResult> {
    cfg.validate()?;
    let plan = ds.fold_plan(cfg.n_folds, cfg.seed)?;
    cross_validate_with(ds, cfg, plan)
}

pub fn cross_validate_with(ds: &Dataset, cfg: &TrainConfig, plan: FoldPlan) -> Result<CvResult> {
    audit_plan(&plan, ds)?;
    let chosen: Vec<usize> = match &cfg.folds {
        Some(f) => f.clone(),
        None => (0..plan.splits.len()).collect(),
    };
    if let Some(bad) = chosen.iter().find(|&&i| i >= plan.splits.len()) {
        return Err(Error::Config(format!("split {bad} not in plan")));
    }
    let runs = parallel::try_map(&chosen, cfg.parallel, |&i| {
        train_fold(ds, i, &plan.splits[i], cfg)
    })?;
    let reports: Vec<EvalReport> = runs.iter().map(|r| r.record.test.clone()).collect();
    Ok(CvResult {
        aggregate: AggregateReport::from_reports(&reports),
        plan,
        runs,
    })
}

/// Architecture column of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Full,
    SingleTask,
    NoContext,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::SingleTask, Arch::NoContext, Arch::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Full => "full",
            Arch::SingleTask => "single_task",
            Arch::NoContext => "no_context",
        }
    }

    fn variants(self) -> &'static [Variant] {
        match self {
            Arch::Full => &[Variant::Full],
            Arch::SingleTask => &[Variant::SingleTaskT, Variant::SingleTaskC],
            Arch::NoContext => &[Variant::NoContext],
        }
    }
}

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub name: String,
    pub arch: Arch,
    pub modality: Modality,
    pub aggregate: AggregateReport,
}

fn cell_name(arch: Arch, modality: Modality) -> String {
    let m = match modality {
        Modality::Both => None,
        Modality::TextOnly => Some("Text Only"),
        Modality::AudioOnly => Some("Audio Only"),
    };
    let a = match arch {
        Arch::Full => None,
        Arch::SingleTask => Some("Single Task"),
        Arch::NoContext => Some("No Context"),
    };
    match (m, a) {
        (None, None) => "M3TCM".into(),
        (Some(m), None) => m.into(),
        (None, Some(a)) => a.into(),
        (Some(m), Some(a)) => format!("{m} {a}"),
    }
}

/// Every architecture crossed with every modality, all on the same fold
/// plan and seed. Single-task rows combine the therapist-only run's
/// therapist scores with the client-only run's client scores.
pub fn ablation_grid(ds: &Dataset, cfg: &TrainConfig) -> Result<Vec<GridCell>> {
    cfg.validate()?;
    let plan = ds.fold_plan(cfg.n_folds, cfg.seed)?;
    audit_plan(&plan, ds)?;
    let mut jobs = Vec::new();
    for arch in Arch::ALL {
        for modality in Modality::ALL {
            for &v in arch.variants() {
                jobs.push((arch, modality, v));
            }
        }
    }
    let results = parallel::try_map(&jobs, cfg.parallel, |&(_, modality, v)| {
        let mut c = cfg.with_variant(v);
        c.model.modality = modality;
        c.model.input_width = modality.width(ds.store.meta());
        cross_validate_with(ds, &c, plan.clone()).map(|r| r.aggregate)
    })?;
    let mut cells: Vec<GridCell> = Vec::new();
    for ((arch, modality, v), agg) in jobs.into_iter().zip(results) {
        match cells
            .iter_mut()
            .find(|c| c.arch == arch && c.modality == modality)
        {
            Some(cell) => {
                if v.trains(Role::Therapist) {
                    cell.aggregate.therapist = agg.therapist;
                }
                if v.trains(Role::Client) {
                    cell.aggregate.client = agg.client;
                }
            }
            None => cells.push(GridCell {
                name: cell_name(arch, modality),
                arch,
                modality,
                aggregate: agg,
            }),
        }
    }
    Ok(cells)
}

/// `name,arch,modality,task,class,f1_mean,f1_std` in table order.
pub fn grid_to_csv(cells: &[GridCell]) -> String {
    let mut out = String::from("name,arch,modality,task,class,f1_mean,f1_std\n");
    for c in cells {
        for role in Role::BOTH {
            let Some(t) = c.aggregate.task(role) else {
                continue;
            };
            let prefix = format!(
                "{},{},{},{role}",
                c.name,
                c.arch.as_str(),
                c.modality.as_str()
            );
            for (i, class) in t.classes.iter().enumerate() {
                out.push_str(&format!(
                    "{prefix},{class},{:.6},{:.6}\n",
                    t.f1_mean[i], t.f1_std[i]
                ));
            }
            out.push_str(&format!(
                "{prefix},macro,{:.6},{:.6}\n",
                t.macro_mean, t.macro_std
            ));
        }
    }
    out
}

/// Offline and online scores at one context size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub offline: AggregateReport,
    pub online: AggregateReport,
}

/// Retrains at every `k` on one fold plan; each point carries both the
/// offline test scores and the online scores of the same checkpoints.
pub fn context_sweep(ds: &Dataset, cfg: &TrainConfig, ks: &[usize]) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("context sizes must be positive".into()));
    }
    let plan = ds.fold_plan(cfg.n_folds, cfg.seed)?;
    audit_plan(&plan, ds)?;
    parallel::try_map(ks, cfg.parallel, |&k| {
        let mut c = cfg.clone();
        c.model.k = k;
        let cv = cross_validate_with(ds, &c, plan.clone())?;
        Ok(SweepPoint {
            k,
            online: cv.online(ds, false)?,
            offline: cv.aggregate,
        })
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepMode {
    Offline,
    Online,
}

/// `k,task,macro_f1_mean,macro_f1_std`, one row per context size and task.
pub fn sweep_to_csv(points: &[SweepPoint], mode: SweepMode) -> String {
    let mut out = String::from("k,task,macro_f1_mean,macro_f1_std\n");
    for role in Role::BOTH {
        for p in points {
            let agg = match mode {
                SweepMode::Offline => &p.offline,
                SweepMode::Online => &p.online,
            };
            if let Some(t) = agg.task(role) {
                out.push_str(&format!(
                    "{},{role},{:.6},{:.6}\n",
                    p.k, t.macro_mean, t.macro_std
                ));
            }
        }
    }
    out
}
