//! Batch front end: config validation, checkpointed continuity runs, CSV artifacts.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod output;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use commands::{audit, deform, resume, sweep, Control, RunSummary};
pub use config::{Plan, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("solver failure in {run} at eps = {eps:e}, t = {t}: {message}")]
    Solver { run: String, eps: f64, t: f64, message: String },
    #[error("{count} audit checks failed")]
    AuditFailed { count: usize },
    #[error("io error: {0}")]
    Io(String),
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CliError::Io(e.to_string()),
            other => CliError::Checkpoint(other.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) | CliError::Checkpoint(_) => 2,
            CliError::Solver { .. } => 3,
            CliError::AuditFailed { .. } => 4,
        }
    }
}
