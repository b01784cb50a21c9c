//! Streaming sample intake: online filtering, staleness control, replay
//! mixing and first-completed batch assembly.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitRng;
use crate::types::{Group, PromptId, RewardKind, VersionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterDecision {
    Keep,
    DiscardAllCorrect,
    DiscardAllWrong,
    DiscardUngradable,
}

/// Drops groups whose graded samples are uniformly correct or uniformly
/// wrong. Grading errors are ignored; a group with no graded sample is
/// ungradable.
pub fn online_filter(group: &Group) -> Result<FilterDecision> {
    let mut pass = 0usize;
    let mut fail = 0usize;
    for s in &group.samples {
        match s.reward_kind() {
            None => return Err(Error::Ungraded(s.prompt_id)),
            Some(RewardKind::Pass) => pass += 1,
            Some(RewardKind::Fail) => fail += 1,
            Some(RewardKind::GradeError) => {}
        }
    }
    Ok(match (pass, fail) {
        (0, 0) => FilterDecision::DiscardUngradable,
        (_, 0) => FilterDecision::DiscardAllCorrect,
        (0, _) => FilterDecision::DiscardAllWrong,
        _ => FilterDecision::Keep,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StalenessPolicy {
    pub max_staleness: u64,
}

impl Default for StalenessPolicy {
    fn default() -> Self {
        Self { max_staleness: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Staleness {
    Reuse,
    Regenerate,
}

/// Staleness verdict for data generated at `version`.
pub fn version_staleness(version: VersionId, current: VersionId, policy: &StalenessPolicy) -> Result<Staleness> {
    if version > current {
        return Err(Error::FutureVersion {
            birth: version,
            current,
        });
    }
    Ok(if current - version <= policy.max_staleness {
        Staleness::Reuse
    } else {
        Staleness::Regenerate
    })
}

/// Staleness of a group, measured from its oldest sample so that every
/// sample respects the bound.
pub fn staleness_check(group: &Group, current: VersionId, policy: &StalenessPolicy) -> Result<Staleness> {
    if group.birth_version > current {
        return Err(Error::FutureVersion {
            birth: group.birth_version,
            current,
        });
    }
    version_staleness(group.oldest_version(), current, policy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferConfig {
    pub capacity: usize,
    pub reuse_ratio: f64,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            capacity: 64,
            reuse_ratio: 0.0,
        }
    }
}

impl BufferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("buffer capacity must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.reuse_ratio) {
            return Err(Error::Config(format!("reuse_ratio must be in [0,1), got {}", self.reuse_ratio)));
        }
        Ok(())
    }
}

/// FIFO replay buffer of groups left over from online filtering.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    entries: VecDeque<Group>,
    capacity: usize,
    reuse_ratio: f64,
    evicted: u64,
    expired: u64,
}

impl ReplayBuffer {
    pub fn new(cfg: BufferConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            entries: VecDeque::new(),
            capacity: cfg.capacity,
            reuse_ratio: cfg.reuse_ratio,
            evicted: 0,
            expired: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn reuse_ratio(&self) -> f64 {
        self.reuse_ratio
    }

    /// Groups dropped for capacity so far.
    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    /// Groups dropped for staleness so far.
    pub fn expired(&self) -> u64 {
        self.expired
    }

    pub fn iter(&self) -> impl Iterator<Item = &Group> {
        self.entries.iter()
    }

    /// Appends a group, evicting the oldest entries beyond capacity.
    pub fn store(&mut self, group: Group) {
        self.entries.push_back(group);
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
            self.evicted += 1;
        }
    }

    /// Drops entries that are too stale for `current`; returns their prompt ids.
    pub fn purge_expired(&mut self, current: VersionId, policy: &StalenessPolicy) -> Vec<PromptId> {
        let mut dropped = Vec::new();
        self.entries.retain(|g| {
            let ok = matches!(staleness_check(g, current, policy), Ok(Staleness::Reuse));
            if !ok {
                dropped.push(g.prompt_id);
            }
            ok
        });
        self.expired += dropped.len() as u64;
        dropped
    }
}

/// A mixed batch with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub groups: Vec<Group>,
    pub reused: usize,
    pub fresh: usize,
    pub expired_dropped: usize,
}

/// Not enough fresh groups to fill the batch; the fresh groups are handed back
/// and the buffer is left untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct Underfull {
    pub fresh: Vec<Group>,
    pub needed: usize,
}

/// Draws `floor(reuse_ratio * batch_groups)` staleness-valid groups from the
/// buffer (oldest first), fills the rest with fresh groups, stores leftover
/// fresh groups, and shuffles the result.
pub fn buffer_mix(
    buffer: &mut ReplayBuffer,
    fresh: Vec<Group>,
    batch_groups: usize,
    current: VersionId,
    policy: &StalenessPolicy,
    rng: &mut SplitRng,
) -> std::result::Result<MixedBatch, Underfull> {
    assert!(batch_groups >= 1, "batch_groups must be positive");
    let valid = buffer
        .entries
        .iter()
        .filter(|g| matches!(staleness_check(g, current, policy), Ok(Staleness::Reuse)))
        .count();
    let want_reuse = (buffer.reuse_ratio * batch_groups as f64).floor() as usize;
    let reused = want_reuse.min(valid).min(batch_groups);
    let need_fresh = batch_groups - reused;
    if fresh.len() < need_fresh {
        return Err(Underfull {
            fresh,
            needed: need_fresh,
        });
    }
    let expired_dropped = buffer.purge_expired(current, policy).len();
    let mut groups: Vec<Group> = buffer.entries.drain(..reused).collect();
    let mut fresh = fresh.into_iter();
    groups.extend(fresh.by_ref().take(need_fresh));
    for g in fresh {
        buffer.store(g);
    }
    groups.shuffle(rng);
    Ok(MixedBatch {
        groups,
        reused,
        fresh: need_fresh,
        expired_dropped,
    })
}

/// Collects filtered groups in completion order and emits a batch the moment
/// `batch_size` kept groups are available.
#[derive(Debug, Clone)]
pub struct BatchAssembler {
    batch_size: usize,
    policy: StalenessPolicy,
    pending: VecDeque<Group>,
    regenerate: Vec<PromptId>,
    arrivals: u64,
    discarded: u64,
}

impl BatchAssembler {
    pub fn new(batch_size: usize, policy: StalenessPolicy) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(Self {
            batch_size,
            policy,
            pending: VecDeque::new(),
            regenerate: Vec::new(),
            arrivals: 0,
            discarded: 0,
        })
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn arrivals(&self) -> u64 {
        self.arrivals
    }

    pub fn discarded(&self) -> u64 {
        self.discarded
    }

    /// Accepts one arrival; returns a batch if this arrival completes one.
    pub fn push(&mut self, group: Group, decision: FilterDecision, current: VersionId) -> Option<Vec<Group>> {
        if self.accept(group, decision) {
            self.try_emit(current)
        } else {
            None
        }
    }

    /// Records one arrival without emitting. Returns whether the group was kept.
    pub fn accept(&mut self, group: Group, decision: FilterDecision) -> bool {
        self.arrivals += 1;
        if decision != FilterDecision::Keep {
            self.discarded += 1;
            return false;
        }
        self.pending.push_back(group);
        true
    }

    /// Drops stale pending groups, then emits a batch if enough remain.
    pub fn try_emit(&mut self, current: VersionId) -> Option<Vec<Group>> {
        self.expire(current);
        if self.pending.len() >= self.batch_size {
            Some(self.pending.drain(..self.batch_size).collect())
        } else {
            None
        }
    }

    /// Moves pending groups that exceed the staleness bound to the
    /// regeneration list.
    pub fn expire(&mut self, current: VersionId) {
        let policy = self.policy;
        let regen = &mut self.regenerate;
        self.pending.retain(|g| {
            let ok = matches!(staleness_check(g, current, &policy), Ok(Staleness::Reuse));
            if !ok {
                regen.push(g.prompt_id);
            }
            ok
        });
    }

    /// Takes every pending group, leaving the assembler empty.
    pub fn drain_pending(&mut self) -> Vec<Group> {
        self.pending.drain(..).collect()
    }

    /// Prompt ids that must be regenerated, in the order they were expired.
    pub fn take_regenerations(&mut self) -> Vec<PromptId> {
        std::mem::take(&mut self.regenerate)
    }
}

/// Disposition of in-flight rollouts after a training step produced `post_version`.
pub fn inflight_dispositions(
    inflight_versions: &[VersionId],
    post_version: VersionId,
    policy: &StalenessPolicy,
) -> Result<Vec<Staleness>> {
    inflight_versions
        .iter()
        .map(|&v| version_staleness(v, post_version, policy))
        .collect()
}
