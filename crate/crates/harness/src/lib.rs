//! Configuration, orchestration and persistence for adaptive affinity field
//! experiments; backs the `affield` command-line tool.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod threads;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use eval::{evaluate_pairs, EvalReport, FinalMetrics};
pub use experiment::{
    kernel_report, run, run_experiment, trivial_solution_probe, weight_probe, KernelRow,
    ProbeReport, RunOutput, RunRecord,
};
