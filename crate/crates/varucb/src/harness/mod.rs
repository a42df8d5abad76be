//! Experiment harness: config parsing, the (agent x seed) run matrix with
//! CSV/JSON logging, and SVG plotting.

pub mod config;
pub mod plot;
pub mod runner;

pub use config::{
    apply_overrides, parse_config, serialize_config, AgentKind, AgentSpec, ConfigError, EnvSpec,
    ExperimentConfig, ScheduleSpec, SharedParams,
};
pub use plot::emit_plots;
pub use runner::{
    bench_experiment, env_seed, read_summaries, run_experiment, BenchRow, CheckpointCalibration,
    HarnessError, ReliabilityPoint, RunSummary,
};
