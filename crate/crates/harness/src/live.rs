//! A simulator workload that runs real toy rollouts and training steps.
//!
//! The simulator decides when things happen; this workload decides what
//! happens. Every random draw is keyed by prompt, attempt and sample index,
//! so the content of a rollout does not depend on the scheduling mode.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use asyncrl_core::metrics::pass_rate;
use asyncrl_core::objective::{apply_masks, ascent_step, objective_value_and_gradient, SampleMask};
use asyncrl_core::pipeline::{buffer_mix, ReplayBuffer};
use asyncrl_core::toy_env::{
    grade, logprob_trace, rollout, sample_index, token_dist_tempered, unit_draw, EngineKind, TaskConfig,
};
use asyncrl_core::types::{PromptId, RewardKind, SampleStatus, Tick, VersionId};
use asyncrl_core::{Error, Group, ParamTable, Prompt, Result, Sample, SplitRng};
use asyncrl_sim::{SampleKey, SampleMeta, Workload};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::eval::{evaluate_config, EvalTable};

/// Scalars logged after each training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// Version produced by this step.
    pub version: VersionId,
    pub at: Tick,
    pub objective: f64,
    /// Mean raw score over graded samples.
    pub mean_reward: f64,
    /// Grader pass rate over graded samples.
    pub pass_rate: f64,
    /// Mean policy entropy at the trained positions, in nats.
    pub entropy: f64,
    pub staleness_mean: f64,
    pub staleness_max: u64,
    pub groups: usize,
    pub reused_groups: usize,
    pub masked_grade_error: usize,
    pub masked_truncated: usize,
    pub gradient_norm: f64,
    /// `[passes, fails]` of every trained group, in batch order.
    pub group_outcomes: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: u64,
    pub table: EvalTable,
}

pub struct LiveWorkload {
    cfg: ExperimentConfig,
    root: SplitRng,
    infer: EngineKind,
    contexts: Vec<usize>,
    versions: BTreeMap<VersionId, Arc<ParamTable>>,
    /// Versions the simulator released while still inside the replay window.
    released: BTreeSet<VersionId>,
    inflight: BTreeMap<SampleKey, Sample>,
    buffer: ReplayBuffer,
    eval_prompts: Vec<Prompt>,
    steps: Vec<StepRecord>,
    evals: Vec<EvalPoint>,
}

impl LiveWorkload {
    pub fn new(cfg: &ExperimentConfig, initial: ParamTable, eval_prompts: Vec<Prompt>) -> Result<Self> {
        initial.check_same_shape(&ParamTable::for_task(&cfg.task))?;
        let root = SplitRng::new(cfg.seed);
        let infer = EngineKind::Infer {
            perturb_scale: cfg.train.perturb_scale,
            perturb_seed: root.split("infer-engine").next_word(),
        };
        Ok(Self {
            root,
            infer,
            contexts: cfg.task.domain_contexts().collect(),
            versions: [(0, Arc::new(initial))].into_iter().collect(),
            released: BTreeSet::new(),
            inflight: BTreeMap::new(),
            buffer: ReplayBuffer::new(cfg.buffer)?,
            eval_prompts,
            steps: Vec::new(),
            evals: Vec::new(),
            cfg: cfg.clone(),
        })
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn evals(&self) -> &[EvalPoint] {
        &self.evals
    }

    pub fn latest(&self) -> (VersionId, Arc<ParamTable>) {
        let (&v, p) = self.versions.last_key_value().expect("version 0 is never dropped");
        (v, p.clone())
    }

    pub fn resident_versions(&self) -> usize {
        self.versions.len()
    }

    /// Training prompt `id`, placed in a context of the task's domain.
    pub fn prompt(&self, id: PromptId) -> Prompt {
        let mut rng = self.root.split("train-prompt").split_u64(id);
        let c = self.contexts[rng.below(self.contexts.len() as u64) as usize];
        self.cfg.task.prompt_for_context(id, c)
    }

    fn params(&self, v: VersionId) -> Result<Arc<ParamTable>> {
        self.versions
            .get(&v)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("policy version {v} is not resident")))
    }

    fn key_stream(&self, label: &str, key: SampleKey) -> SplitRng {
        self.root
            .split(label)
            .split_u64(key.prompt)
            .split_u64(key.attempt as u64)
            .split_u64(key.index as u64)
    }

    fn sim_length(&self, s: &Sample) -> u64 {
        s.tokens.len() as u64 * self.cfg.train.token_scale
    }

    fn task(&self) -> &TaskConfig {
        &self.cfg.task
    }

    /// Drops released versions that have left the replay window.
    fn prune(&mut self, newest: VersionId) {
        let window = self.cfg.staleness.max_staleness;
        let gone: Vec<VersionId> = self
            .released
            .iter()
            .copied()
            .filter(|&v| v.saturating_add(window) < newest)
            .collect();
        for v in gone {
            self.released.remove(&v);
            self.versions.remove(&v);
        }
    }

    fn record_eval(&mut self, step: u64, params: &ParamTable) -> Result<()> {
        let table = evaluate_config(params, &self.cfg, &self.eval_prompts)?;
        self.evals.push(EvalPoint { step, table });
        Ok(())
    }

    pub fn evaluate_initial(&mut self) -> Result<EvalTable> {
        let p = self.params(0)?;
        self.record_eval(0, &p)?;
        Ok(self.evals.last().expect("just pushed").table.clone())
    }
}

/// Continues `sample` from position `from` under `params`, replacing
/// everything at and after `from`.
fn continue_rollout(
    params: &ParamTable,
    engine: EngineKind,
    task: &TaskConfig,
    sample: &mut Sample,
    from: usize,
    rng: &mut SplitRng,
) -> Result<()> {
    sample.tokens.truncate(from);
    sample.infer_logps.truncate(from);
    let eos = task.eos_token();
    sample.status = if eos.is_some() {
        SampleStatus::Truncated
    } else {
        SampleStatus::Complete
    };
    for pos in from..task.max_len {
        let probs = token_dist_tempered(params, engine, sample.context_id, pos, sample.temperature)?;
        let tok = sample_index(&probs, unit_draw(rng));
        sample.tokens.push(tok as u32);
        sample.infer_logps.push(libm::log(probs[tok]));
        if Some(tok as u32) == eos {
            sample.status = SampleStatus::Complete;
            break;
        }
    }
    Ok(())
}

impl Workload for LiveWorkload {
    fn begin_sample(&mut self, key: SampleKey, version: VersionId) -> Result<u64> {
        let params = self.params(version)?;
        let prompt = self.prompt(key.prompt);
        let mut rng = self.key_stream("rollout", key);
        let s = rollout(
            &params,
            self.infer,
            self.task(),
            &prompt,
            self.task().max_len,
            self.cfg.train.temperature,
            version,
            &mut rng,
        )?;
        let len = self.sim_length(&s);
        self.inflight.insert(key, s);
        Ok(len)
    }

    fn continue_sample(&mut self, key: SampleKey, keep: u64, version: VersionId) -> Result<u64> {
        let params = self.params(version)?;
        let mut rng = self.key_stream("resume", key).split_u64(version);
        let scale = self.cfg.train.token_scale;
        let task = self.cfg.task.clone();
        let infer = self.infer;
        let s = self
            .inflight
            .get_mut(&key)
            .ok_or_else(|| Error::InvalidArgument(format!("no rollout in flight for {key:?}")))?;
        let from = ((keep / scale) as usize).min(s.tokens.len().saturating_sub(1));
        continue_rollout(&params, infer, &task, s, from, &mut rng)?;
        s.version_id = version;
        let len = s.tokens.len() as u64 * scale;
        Ok(len.max(keep + 1))
    }

    fn grade(&mut self, prompt: PromptId, attempt: u32, meta: &[SampleMeta]) -> Result<Group> {
        let p = self.prompt(prompt);
        let mut samples = Vec::with_capacity(meta.len());
        for (i, m) in meta.iter().enumerate() {
            let key = SampleKey {
                prompt,
                attempt,
                index: i as u32,
            };
            let mut s = self
                .inflight
                .remove(&key)
                .ok_or_else(|| Error::InvalidArgument(format!("no rollout in flight for {key:?}")))?;
            s.version_id = m.version;
            s.t_start = m.t_start;
            s.t_end = m.t_end;
            let mut rng = self.key_stream("grade", key);
            s.reward = Some(grade(&s, &p, &self.cfg.task, &self.cfg.grader, &mut rng)?);
            samples.push(s);
        }
        Group::new(samples)
    }

    fn train(&mut self, batch: &[Group], current: VersionId, at: Tick) -> Result<()> {
        let theta = self.params(current)?;
        let mut mix_rng = self.root.split("replay").split_u64(current);
        let mixed = buffer_mix(
            &mut self.buffer,
            batch.to_vec(),
            batch.len(),
            current,
            &self.cfg.staleness,
            &mut mix_rng,
        )
        .map_err(|u| Error::InvalidArgument(format!("replay mix underfull: needed {}", u.needed)))?;
        let mut groups = mixed.groups;
        let mut staleness = Vec::new();
        for g in &mut groups {
            for s in &mut g.samples {
                let behaviour = self.params(s.version_id)?;
                s.train_logps = Some(logprob_trace(&behaviour, EngineKind::Train, s)?);
                staleness.push(current - s.version_id);
            }
        }
        let group_outcomes = groups
            .iter()
            .map(|g| {
                let count = |k: RewardKind| g.samples.iter().filter(|s| s.reward_kind() == Some(k)).count();
                [count(RewardKind::Pass), count(RewardKind::Fail)]
            })
            .collect();
        let graded: Vec<Sample> = groups.iter().flat_map(|g| g.samples.iter().cloned()).collect();
        let scores: Vec<f64> = graded.iter().filter_map(|s| s.reward.and_then(|r| r.raw_score)).collect();
        let mean_reward = if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        };
        let pass = pass_rate(&graded).unwrap_or(0.0);
        let mut entropy_sum = 0.0;
        let mut positions = 0usize;
        for s in &graded {
            for pos in 0..s.tokens.len() {
                let p = token_dist_tempered(&theta, EngineKind::Train, s.context_id, pos, s.temperature)?;
                entropy_sum -= p.iter().filter(|&&x| x > 0.0).map(|&x| x * libm::log(x)).sum::<f64>();
                positions += 1;
            }
        }
        let masked = apply_masks(groups, self.cfg.t_max(), &self.cfg.train.repetition, &self.cfg.advantage)?;
        let (objective, grad) = objective_value_and_gradient(&masked, &theta, &self.cfg.clip)?;
        let next = ascent_step(&theta, &grad, self.cfg.train.learning_rate)?;
        let version = current + 1;
        let step = self.steps.len() as u64 + 1;
        self.steps.push(StepRecord {
            step,
            version,
            at,
            objective,
            mean_reward,
            pass_rate: pass,
            entropy: if positions == 0 { 0.0 } else { entropy_sum / positions as f64 },
            staleness_mean: staleness.iter().sum::<u64>() as f64 / staleness.len().max(1) as f64,
            staleness_max: staleness.iter().copied().max().unwrap_or(0),
            groups: masked.groups.len(),
            reused_groups: mixed.reused,
            masked_grade_error: masked.count_mask(SampleMask::MaskGradeError),
            masked_truncated: masked.count_mask(SampleMask::MaskTruncated),
            gradient_norm: grad.l2_norm(),
            group_outcomes,
        });
        self.versions.insert(version, Arc::new(next));
        self.prune(version);
        let every = self.cfg.train.eval_every;
        if every > 0 && step.is_multiple_of(every) {
            let p = self.params(version)?;
            self.record_eval(step, &p)?;
        }
        Ok(())
    }

    fn discard_attempt(&mut self, prompt: PromptId, attempt: u32) {
        let keys: Vec<SampleKey> = self
            .inflight
            .range(
                SampleKey {
                    prompt,
                    attempt,
                    index: 0,
                }..=SampleKey {
                    prompt,
                    attempt,
                    index: u32::MAX,
                },
            )
            .map(|(k, _)| *k)
            .collect();
        for k in keys {
            self.inflight.remove(&k);
        }
    }

    fn evict(&mut self, version: VersionId) {
        self.released.insert(version);
        let newest = self.latest().0;
        self.prune(newest);
    }
}

