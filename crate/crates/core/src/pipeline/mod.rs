//! Experiment configuration, frame ingestion and the commands that tie the
//! other modules into reproducible runs.
//!
//! Every command writes into `<output_dir>/runs/<timestamp>-<command>/` with a
//! `run.json` holding the resolved configuration, its hash, the seed and the
//! version. Downstream commands pick up the most recent successful upstream run.

mod commands;
mod config;
mod ingest;
mod run;

pub use commands::{execute, image_grid, Command, RunOutcome};
pub use config::{
    apply_override, DatasetConfig, DetectorConfig, EvalConfig, ExperimentConfig, ModelConfig, ScheduleConfig,
    SweepConfig,
};
pub use ingest::{ingest_video, IMAGE_EXTENSIONS};
pub use run::{
    completed_runs, latest_run, require_run, runs_root, ErrorRecord, RunContext, RunRecord, RunStatus, ERROR_RECORD,
    RUN_RECORD, VERSION,
};
