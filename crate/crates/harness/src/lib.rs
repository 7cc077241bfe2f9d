//! Experiment configuration, batch runs and certificate verification behind
//! the `valstab` binary.

pub mod config;
pub mod format;
pub mod run;
pub mod verify;

use thiserror::Error;

pub use config::{ClassEntry, ExperimentConfig, PolicyKind};
pub use run::{run_experiment, CheckpointGap, ExperimentSummary, RunSummary};
pub use verify::{verify, CheckerKind, VerifyParams};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Runtime(_) => 3,
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        HarnessError::Runtime(format!("{}: {err}", path.display()))
    }
}
