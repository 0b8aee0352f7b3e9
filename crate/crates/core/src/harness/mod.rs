//! Experiment orchestration: config in, report bundle out.

mod config;
mod report;
mod run;

pub use config::{
    parse_experiment_config, ExperimentSpec, InferenceSettings, IntervalSettings, TestKind, UniverseSpec,
    BUILTIN_EXECUTORS,
};
pub use report::{
    emit_report, parse_report_json, render_report_json, render_runs_csv, render_summary, ReportDocument,
    CONFIG_FILE, REPORT_FILE, REPORT_SCHEMA, RUNS_FILE,
};
pub use run::{
    build_pool, build_registry, build_universe, resolve_threads, run_experiment, run_with_seed, simulate,
    spec_digest, summarize, Replication, ReportBundle, SimulationSummary, THREADS_ENV,
};

use std::path::Path;

use crate::error::{Error, Result};

/// Reads and parses an experiment file.
pub fn load_experiment(path: &Path) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_experiment_config(&text)
}
