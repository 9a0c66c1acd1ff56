//! Training, cross-validation, ablations, context sweeps and online
//! evaluation.

mod experiments;
mod optim;
pub mod output;
pub mod plot;
mod train;

pub use experiments::{
    ablation_grid, audit_plan, context_sweep, cross_validate, cross_validate_with, grid_to_csv,
    sweep_to_csv, Arch, CvResult, GridCell, SweepMode, SweepPoint,
};
pub use optim::{AdamState, AdamW};
pub use train::{
    evaluate, online_evaluate, predict_prepared, selection_metric, train_fold, trained_mask,
    Dataset, EpochLog, FoldRun, Prepared, RunRecord, ScoredUtterance, TrainConfig, Trainer,
};
