//! Experiment harness: configs, reference solutions, statistics, reports.

pub mod config;
pub mod experiment;
pub mod oracle;
pub mod stats;

pub use config::{ExperimentConfig, ProblemSpec, Scheme, StepRule};
pub use experiment::{run_experiment, write_report, CellReport, ExperimentReport};
pub use oracle::{reference_solution, solve_deterministic, OracleConfig, SurrogateConfig};
pub use stats::confidence_interval;
