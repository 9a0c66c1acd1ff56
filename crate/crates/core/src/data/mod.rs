//! Sessions, labels, fold plans and context windows.

mod folds;
mod labels;
mod session;
mod windows;

pub use folds::{make_folds, FoldPlan, Split};
pub use labels::{
    harmonize, Role, CLIENT_CLASSES, CLIENT_PRIORS, THERAPIST_CLASSES, THERAPIST_PRIORS,
};
pub use session::{class_priors, AudioSpan, Session, Utterance, UtteranceKey};
pub use windows::{build_all_windows, build_windows, Scoring, Slot, StrideMode, WindowSpec};
