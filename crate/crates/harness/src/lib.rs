//! Experiment runner for the asyncrl toolkit.
//!
//! Wires the toy environment, objective, pipeline, simulator, fusion and
//! metrics into reproducible runs driven by one TOML config. Outputs are
//! deterministic per config: rerunning a command reproduces every artifact
//! byte for byte.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod live;
pub mod trace;

pub use commands::{cmd_eval, cmd_fuse, cmd_simulate, cmd_trace_diff, cmd_train, CommandSummary, RunRecord};
pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
