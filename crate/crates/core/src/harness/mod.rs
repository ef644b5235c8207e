//! Stream runner, configuration, datasets, metrics and result files.

pub mod ablation;
pub mod config;
pub mod dataset;
pub mod metrics;
pub mod report;
pub mod runner;

pub use config::StreamConfig;
pub use runner::{run_config, run_stream, StreamRecord, StreamRun};
