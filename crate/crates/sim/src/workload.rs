//! What the simulator generates and trains on.
//!
//! The simulator owns timing and placement; a [`Workload`] owns content:
//! response lengths, rewards and parameter updates.

use asyncrl_core::types::{Group, PromptId, RewardOutcome, Sample, SampleStatus, Tick, VersionId};
use asyncrl_core::{Result, SplitRng};

use crate::config::LengthModel;

/// Identifies one sample of one attempt of a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SampleKey {
    pub prompt: PromptId,
    pub attempt: u32,
    pub index: u32,
}

/// Timing and provenance the simulator hands over when a group is graded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleMeta {
    pub version: VersionId,
    pub t_start: Tick,
    pub t_end: Tick,
}

pub trait Workload {
    /// Starts a sample under `version`; returns its response length in tokens.
    fn begin_sample(&mut self, key: SampleKey, version: VersionId) -> Result<u64>;

    /// Continues a sample under `version` after keeping its first `keep`
    /// tokens; returns the new total length, which is greater than `keep`.
    fn continue_sample(&mut self, key: SampleKey, keep: u64, version: VersionId) -> Result<u64>;

    /// Grades a finished attempt. `meta` is indexed by sample index.
    fn grade(&mut self, prompt: PromptId, attempt: u32, meta: &[SampleMeta]) -> Result<Group>;

    /// Applies one training step to `batch`; the result becomes `current + 1`.
    fn train(&mut self, batch: &[Group], current: VersionId, at: Tick) -> Result<()>;

    /// Drops an attempt's content after it was discarded for regeneration.
    fn discard_attempt(&mut self, _prompt: PromptId, _attempt: u32) {}

    /// The simulator no longer needs `version`.
    fn evict(&mut self, _version: VersionId) {}
}

/// Content-free workload: log-normal lengths and Bernoulli rewards with a
/// per-prompt pass probability drawn uniformly from `[0, 1)`.
///
/// Every draw is keyed by `(seed, prompt, attempt, index)`, so two runs with
/// the same seed see the same lengths and rewards for the same attempt
/// regardless of scheduling.
#[derive(Debug, Clone)]
pub struct AbstractWorkload {
    root: SplitRng,
    lengths: LengthModel,
}

impl AbstractWorkload {
    pub fn new(seed: u64, lengths: LengthModel) -> Self {
        Self {
            root: SplitRng::new(seed),
            lengths,
        }
    }

    fn stream(&self, label: &str, key: SampleKey) -> SplitRng {
        self.root
            .split(label)
            .split_u64(key.prompt)
            .split_u64(key.attempt as u64)
            .split_u64(key.index as u64)
    }

    pub fn length_of(&self, key: SampleKey) -> u64 {
        let raw = self.stream("len", key).log_normal(self.lengths.mu, self.lengths.sigma);
        (raw.round() as u64).clamp(self.lengths.min_tokens, self.lengths.max_tokens)
    }

    pub fn pass_probability(&self, prompt: PromptId) -> f64 {
        self.root.split("pass").split_u64(prompt).next_f64()
    }
}

impl Workload for AbstractWorkload {
    fn begin_sample(&mut self, key: SampleKey, _version: VersionId) -> Result<u64> {
        Ok(self.length_of(key))
    }

    fn continue_sample(&mut self, key: SampleKey, keep: u64, _version: VersionId) -> Result<u64> {
        Ok(self.length_of(key).max(keep + 1))
    }

    fn grade(&mut self, prompt: PromptId, attempt: u32, meta: &[SampleMeta]) -> Result<Group> {
        let p = self.pass_probability(prompt);
        let samples = meta
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let key = SampleKey {
                    prompt,
                    attempt,
                    index: i as u32,
                };
                let reward = if self.stream("reward", key).next_f64() < p {
                    RewardOutcome::pass()
                } else {
                    RewardOutcome::fail()
                };
                Sample {
                    prompt_id: prompt,
                    context_id: 0,
                    version_id: m.version,
                    tokens: Vec::new(),
                    infer_logps: Vec::new(),
                    train_logps: None,
                    temperature: 1.0,
                    status: SampleStatus::Complete,
                    reward: Some(reward),
                    t_start: m.t_start,
                    t_end: m.t_end,
                }
            })
            .collect();
        Group::new(samples)
    }

    fn train(&mut self, _batch: &[Group], _current: VersionId, _at: Tick) -> Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(prompt: u64, attempt: u32, index: u32) -> SampleKey {
        SampleKey { prompt, attempt, index }
    }

    #[test]
    fn lengths_are_keyed_not_sequenced() {
        let mut a = AbstractWorkload::new(5, LengthModel::default());
        let b = AbstractWorkload::new(5, LengthModel::default());
        let first = a.begin_sample(key(3, 0, 1), 0).unwrap();
        a.begin_sample(key(9, 0, 0), 0).unwrap();
        assert_eq!(a.begin_sample(key(3, 0, 1), 7).unwrap(), first);
        assert_eq!(b.length_of(key(3, 0, 1)), first);
        assert_ne!(b.length_of(key(3, 1, 1)), b.length_of(key(3, 0, 1)));
    }

    #[test]
    fn lengths_respect_bounds() {
        let m = LengthModel {
            mu: 3.0,
            sigma: 2.0,
            min_tokens: 5,
            max_tokens: 50,
        };
        let w = AbstractWorkload::new(1, m);
        for p in 0..500 {
            let l = w.length_of(key(p, 0, 0));
            assert!((5..=50).contains(&l));
        }
    }

    #[test]
    fn grading_is_deterministic() {
        let meta = vec![
            SampleMeta {
                version: 0,
                t_start: 0,
                t_end: 1
            };
            8
        ];
        let mut a = AbstractWorkload::new(2, LengthModel::default());
        let mut b = AbstractWorkload::new(2, LengthModel::default());
        assert_eq!(a.grade(4, 0, &meta).unwrap(), b.grade(4, 0, &meta).unwrap());
    }
}
