//! Experiment harness: flat key=value configuration, dataset file formats,
//! and the end-to-end experiment runner behind the CLI.

pub mod config;
pub mod experiment;
pub mod io;

pub use config::{ExperimentConfig, ImageNetSize, Scenario};
pub use experiment::{
    calibrate_arrival_rate, lead_times, median_lead, run_experiment, PolicyEval, PolicyMetrics,
    RunReport,
};
pub use io::{ingest_external, load_frames, load_power_csv, save_frames, save_power_csv};
