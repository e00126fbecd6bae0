//! Config-driven sweeps of truncation sizes for `stattrunc`.

pub mod config;
pub mod emit;
pub mod experiment;

pub use config::{ConfigError, ExperimentConfig, Format};
pub use emit::{emit, render, EmitError, COLUMNS};
pub use experiment::{run_experiment, ExperimentResult, Row};
