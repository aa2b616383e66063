//! Experiment orchestration: configuration files, the training loops,
//! greedy evaluation in the real simulator, metrics logs and multi-seed
//! reports.
//!
//! A run is fully determined by its configuration and seed. Every random
//! source is a stream derived from the seed, metrics are written with fixed
//! formatting and contain no timings, so repeating a run reproduces its
//! metrics file byte for byte.

mod config;
mod eval;
mod report;
mod run;

pub use config::{Algorithm, ExperimentConfig, SEED_ENV};
pub use eval::{evaluate, mean_sem, sign_agreement, Evaluation};
pub use report::{format_report, report, ReportRow};
pub use run::{
    gen_data, load_summary, run, world_model, MetricsLog, RunSummary, METRICS_FILE, METRICS_HEADER, SUMMARY_FILE,
    TEAM_FILE, WORLD_MODEL_FILE,
};
