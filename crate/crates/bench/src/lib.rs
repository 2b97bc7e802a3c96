//! Benchmark harness for the subspace optimiser: seeded sweeps, first-order
//! baselines, policy evaluation and call-count accounting.

pub mod baselines;
pub mod evaluate;
pub mod fixture;
pub mod spec;
pub mod suite;
pub mod tally;

use thiserror::Error;

use mso_core::engine::EngineError;
use mso_core::objectives::{IdxError, ObjectiveError};
use mso_core::policy::PolicyError;
use mso_core::train::TrainError;

pub use spec::{preset, ExperimentSpec, ObjectiveSpec, OptimizerId};
pub use suite::{run_suite, RunResult, Runner};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error("checkpoint does not match the run configuration: {0}")]
    CheckpointMismatch(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
