//! Deterministic discrete-event simulation of rollout orchestration.
//!
//! Three schedulers share one event loop:
//!
//! - `sync`: generate a full batch on every device, then train on every device.
//! - `naive`: stream groups into batches; every in-flight sample is rebased
//!   onto the newest weights after each sync and re-prefills its prefix.
//! - `dora`: stream groups into batches while keeping each sample on the
//!   version it started with, bounded by the staleness window.
//!
//! Time is an integer tick count. At equal ticks events run in
//! [`EventKind`] order, then in scheduling order, so a run is a pure
//! function of its configuration and seed.

pub mod config;
pub mod event;
pub mod policy;
pub mod report;
pub mod sim;
pub mod workload;

pub use config::{DeviceGroupConfig, LengthModel, SchedulerMode, SimConfig};
pub use event::{Event, EventKind};
pub use report::{SimReport, TraceEvent};
pub use sim::{Simulator, StopCondition, StopReason};
pub use workload::{AbstractWorkload, SampleKey, SampleMeta, Workload};
