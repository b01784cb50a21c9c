//! Shared domain types: policy versions, prompts, samples, rewards, groups.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toy_env::ParamTable;

pub type VersionId = u64;
pub type PromptId = u64;
pub type Token = u32;

/// Simulation time in integer ticks.
pub type Tick = u64;

/// Immutable, versioned parameter snapshot.
#[derive(Debug, Clone)]
pub struct PolicyVersion {
    pub version_id: VersionId,
    pub params: Arc<ParamTable>,
    pub created_at: Tick,
}

/// Issues [`PolicyVersion`]s with strictly increasing ids.
#[derive(Debug, Default, Clone)]
pub struct VersionLog {
    last: Option<(VersionId, Tick)>,
}

impl VersionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn latest(&self) -> Option<VersionId> {
        self.last.map(|(v, _)| v)
    }

    pub fn register(&mut self, params: Arc<ParamTable>, created_at: Tick) -> Result<PolicyVersion> {
        let version_id = match self.last {
            None => 0,
            Some((v, t)) => {
                if created_at < t {
                    return Err(Error::InvalidArgument(format!(
                        "version created at {created_at} precedes previous version at {t}"
                    )));
                }
                v + 1
            }
        };
        self.last = Some((version_id, created_at));
        Ok(PolicyVersion {
            version_id,
            params,
            created_at,
        })
    }
}

/// Task instance for the toy modular-addition family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub a: u64,
    pub b: u64,
    pub context_id: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub prompt_id: PromptId,
    pub payload: Payload,
    pub ground_truth: Vec<Token>,
    pub difficulty: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampleStatus {
    InFlight,
    Complete,
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardKind {
    Pass,
    Fail,
    GradeError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub kind: RewardKind,
    /// 1.0 for pass, 0.0 for fail, absent for a grading error.
    pub raw_score: Option<f64>,
}

impl RewardOutcome {
    pub fn pass() -> Self {
        Self {
            kind: RewardKind::Pass,
            raw_score: Some(1.0),
        }
    }

    pub fn fail() -> Self {
        Self {
            kind: RewardKind::Fail,
            raw_score: Some(0.0),
        }
    }

    pub fn grade_error() -> Self {
        Self {
            kind: RewardKind::GradeError,
            raw_score: None,
        }
    }

    pub fn from_kind(kind: RewardKind) -> Self {
        match kind {
            RewardKind::Pass => Self::pass(),
            RewardKind::Fail => Self::fail(),
            RewardKind::GradeError => Self::grade_error(),
        }
    }
}

/// One rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub prompt_id: PromptId,
    pub context_id: usize,
    pub version_id: VersionId,
    pub tokens: Vec<Token>,
    /// Per-token log-probabilities under the generating (inference) engine.
    pub infer_logps: Vec<f64>,
    /// Per-token log-probabilities recomputed on the train engine.
    pub train_logps: Option<Vec<f64>>,
    /// Sampling temperature; log-probabilities are those of the tempered distribution.
    pub temperature: f64,
    pub status: SampleStatus,
    pub reward: Option<RewardOutcome>,
    pub t_start: Tick,
    pub t_end: Tick,
}

impl Sample {
    pub fn reward_kind(&self) -> Option<RewardKind> {
        self.reward.map(|r| r.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    LogpLengthMismatch { tokens: usize, logps: usize },
    TrainLogpLengthMismatch { tokens: usize, logps: usize },
    RewardBeforeCompletion,
    EndBeforeStart,
    NonFiniteLogp,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LogpLengthMismatch { tokens, logps } => {
                write!(f, "logp length mismatch ({logps} logps for {tokens} tokens)")
            }
            Violation::TrainLogpLengthMismatch { tokens, logps } => {
                write!(f, "train logp length mismatch ({logps} logps for {tokens} tokens)")
            }
            Violation::RewardBeforeCompletion => f.write_str("reward before completion"),
            Violation::EndBeforeStart => f.write_str("end time before start time"),
            Violation::NonFiniteLogp => f.write_str("non-finite log-probability"),
        }
    }
}

/// Checks every sample invariant and returns all violations found.
pub fn validate_sample(s: &Sample) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    if s.status != SampleStatus::InFlight && s.infer_logps.len() != s.tokens.len() {
        out.push(Violation::LogpLengthMismatch {
            tokens: s.tokens.len(),
            logps: s.infer_logps.len(),
        });
    }
    if let Some(train) = &s.train_logps {
        if train.len() != s.tokens.len() {
            out.push(Violation::TrainLogpLengthMismatch {
                tokens: s.tokens.len(),
                logps: train.len(),
            });
        }
    }
    if s.status == SampleStatus::InFlight && s.reward.is_some() {
        out.push(Violation::RewardBeforeCompletion);
    }
    if s.t_end < s.t_start {
        out.push(Violation::EndBeforeStart);
    }
    let finite = s.infer_logps.iter().all(|x| x.is_finite())
        && s.train_logps.iter().flatten().all(|x| x.is_finite());
    if !finite {
        out.push(Violation::NonFiniteLogp);
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// G samples of one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub prompt_id: PromptId,
    pub samples: Vec<Sample>,
    /// Newest generating version among the samples.
    pub birth_version: VersionId,
}

impl Group {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "group needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        let prompt_id = samples[0].prompt_id;
        if let Some(s) = samples.iter().find(|s| s.prompt_id != prompt_id) {
            return Err(Error::InvalidArgument(format!(
                "group mixes prompts {prompt_id} and {}",
                s.prompt_id
            )));
        }
        let birth_version = samples.iter().map(|s| s.version_id).max().unwrap_or(0);
        Ok(Self {
            prompt_id,
            samples,
            birth_version,
        })
    }

    pub fn size(&self) -> usize {
        self.samples.len()
    }

    /// Oldest generating version among the samples; staleness is measured from it.
    pub fn oldest_version(&self) -> VersionId {
        self.samples.iter().map(|s| s.version_id).min().unwrap_or(self.birth_version)
    }
}
