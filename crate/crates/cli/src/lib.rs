//! Experiment pipelines behind the `iro` command: dataset generation,
//! training, evaluation against the ideal per-level learners, and the
//! reproduction runs.

pub mod command;
pub mod config;
pub mod pipeline;
pub mod reproduce;

pub use config::{Experiment, ExperimentConfig, Learner, Method};
pub use reproduce::{reproduce, Comparison, Target};

/// Exit status for a library error: 2 for configuration, 3 for data,
/// 4 for numeric failures.
pub fn exit_code(error: &iro_core::Error) -> u8 {
    match error.kind() {
        iro_core::ErrorKind::Config => 2,
        iro_core::ErrorKind::Data => 3,
        iro_core::ErrorKind::Numeric => 4,
    }
}
