//! Building blocks for small-scale asynchronous RL experiments.
//!
//! The crate is split by concern:
//!
//! - [`rng`]: the counter-based splittable generator every other module draws from.
//! - [`types`]: policy versions, prompts, samples, rewards and groups.
//! - [`toy_env`]: a modular-addition task family with a tabular softmax policy
//!   served by an exact train engine and a perturbed inference engine.
//! - [`objective`]: group-relative advantages, the triplet-clipped token-level
//!   objective with truncated importance sampling, and its analytic gradient.
//! - [`pipeline`]: online filtering, staleness control, replay mixing and
//!   streaming batch assembly.
//! - [`fusion`]: task-vector merging (normalize, dropout, erase, weighted sum).
//! - [`metrics`]: pass@k, tool-necessity selection and pass rates.

pub mod error;
pub mod fusion;
pub mod metrics;
pub mod objective;
pub mod pipeline;
pub mod rng;
pub mod toy_env;
pub mod types;

pub use error::{Error, Result};
pub use rng::SplitRng;
pub use toy_env::ParamTable;
pub use types::{Group, PolicyVersion, Prompt, RewardKind, RewardOutcome, Sample, SampleStatus};
