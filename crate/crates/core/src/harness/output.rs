//! Run directory layout:
//!
//! ```text
//! <out>/config.json      training config
//! <out>/folds.json       fold plan
//! <out>/epochs.csv       per-split, per-epoch loss and validation scores
//! <out>/report.json      per-split records and the aggregate
//! <out>/report.csv       aggregate per-class F1
//! <out>/timing.json      wall-clock per split (not reproducible)
//! <out>/checkpoints/split<i>/
//! ```

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::data::Role;
use crate::error::{Error, Result};
use crate::metrics::AggregateReport;
use crate::store::write_file;

use super::experiments::{CvResult, SweepMode, SweepPoint};
use super::plot::{line_chart, Series};
use super::train::{RunRecord, TrainConfig};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

#[derive(Serialize)]
struct Report<'a> {
    aggregate: &'a AggregateReport,
    runs: Vec<&'a RunRecord>,
}

pub fn epochs_csv(records: &[&RunRecord]) -> String {
    let mut out = String::from("split,epoch,train_loss,val_therapist_macro_f1,val_client_macro_f1,val_selection,selected\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for r in records {
        for e in &r.epochs {
            let _ = writeln!(
                out,
                "{},{},{:.6},{},{},{:.6},{}",
                r.split,
                e.epoch,
                e.train_loss,
                opt(e.val_therapist_macro_f1),
                opt(e.val_client_macro_f1),
                e.val_selection,
                u8::from(e.epoch == r.selected_epoch)
            );
        }
    }
    out
}

pub fn write_cv_run(dir: &Path, cfg: &TrainConfig, cv: &CvResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("config.json"), cfg)?;
    write_json(&dir.join("folds.json"), &cv.plan)?;
    let records: Vec<&RunRecord> = cv.runs.iter().map(|r| &r.record).collect();
    write_text(&dir.join("epochs.csv"), &epochs_csv(&records))?;
    write_json(
        &dir.join("report.json"),
        &Report {
            aggregate: &cv.aggregate,
            runs: records.clone(),
        },
    )?;
    write_text(&dir.join("report.csv"), &cv.aggregate.to_csv())?;
    let timing: Vec<(usize, f64)> = records
        .iter()
        .map(|r| (r.split, r.wall_clock_secs))
        .collect();
    write_json(&dir.join("timing.json"), &timing)?;
    for r in &cv.runs {
        r.checkpoint.save(
            &dir.join("checkpoints")
                .join(format!("split{}", r.record.split)),
        )?;
    }
    Ok(())
}

pub fn sweep_chart(points: &[SweepPoint], mode: SweepMode) -> String {
    let series: Vec<Series> = Role::BOTH
        .into_iter()
        .map(|role| Series {
            name: role.to_string(),
            points: points
                .iter()
                .filter_map(|p| {
                    let agg = match mode {
                        SweepMode::Offline => &p.offline,
                        SweepMode::Online => &p.online,
                    };
                    agg.task(role).map(|t| (p.k as f64, t.macro_mean))
                })
                .collect(),
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    let title = match mode {
        SweepMode::Offline => "Macro F1 vs context size",
        SweepMode::Online => "Online macro F1 vs context size",
    };
    line_chart(title, "k", "macro F1", &series)
}
