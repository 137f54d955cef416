//! Experiment orchestration: configuration, seeded runs, artifacts and
//! summary statistics.

pub mod config;
pub mod plotdata;
pub mod run;
pub mod stats;

pub use config::{ExperimentConfig, Scenario, TracePlan, TraceSelection};
pub use plotdata::emit_plot_data;
pub use run::{run_experiment, run_seed, RunSummary, SeedSummary};
pub use stats::compute_iqm;
