//! Multi-task, multi-modal context model for classifying therapist and client
//! utterances in motivational interviews.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod store;

pub use error::{Error, Result};
