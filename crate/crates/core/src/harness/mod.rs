//! Orchestration of a simulation run: census, intercept tuning, replicates
//! in parallel, and persisted results.

mod census;
mod config;
pub mod output;
mod run;

pub use census::{tune_pairs, tuning_key, Census, TuningEntry, TuningOutcome, TuningTable};
pub use config::{GridConfig, OutcomeConfig, RunConfig};
pub use output::{Manifest, ReplicateRow, ScenarioState, ScenarioStatus};
pub use run::{
    build_grid, draw_replicate, prepare, run_grid, run_replicate, run_scenario, summarize_scenario,
    thread_pool, Prepared, ReplicateContext, ReplicateDraw, RunOutcome, ScenarioFilter,
};
