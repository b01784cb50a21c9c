//! Held-out evaluation with repeated sampling.

use asyncrl_core::metrics::{mean_pass_at_k, pass_at_k_counts};
use asyncrl_core::toy_env::{is_correct, make_task_set, rollout, EngineKind, TaskConfig};
use asyncrl_core::{ParamTable, Prompt, Result, SplitRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    /// Rollouts per prompt.
    pub n: u64,
    pub k: Vec<u64>,
    /// Mean pass@k over prompts, aligned with `k`.
    pub pass_at_k: Vec<f64>,
    /// Exactly-correct rollouts per prompt.
    pub correct: Vec<u64>,
}

impl EvalTable {
    pub fn pass_at(&self, k: u64) -> Option<f64> {
        self.k.iter().position(|&x| x == k).map(|i| self.pass_at_k[i])
    }
}

/// The held-out prompt set of an experiment. Training prompts come from a
/// different stream.
pub fn eval_set(cfg: &ExperimentConfig) -> Result<Vec<Prompt>> {
    eval_set_for(&cfg.task, cfg.eval.prompts, cfg.seed)
}

pub fn eval_set_for(task: &TaskConfig, prompts: usize, seed: u64) -> Result<Vec<Prompt>> {
    make_task_set(task, prompts, &mut SplitRng::new(seed).split("eval-set"))
}

/// Samples `n` rollouts per prompt from the exact train engine and grades
/// them without noise. Each prompt has its own stream, so the table does not
/// depend on thread scheduling.
pub fn evaluate(
    params: &ParamTable,
    task: &TaskConfig,
    prompts: &[Prompt],
    n: u64,
    k: &[u64],
    temperature: f64,
    seed: u64,
) -> Result<EvalTable> {
    for &kk in k {
        pass_at_k_counts(n, 0, kk)?;
    }
    let expected = ParamTable::for_task(task);
    params.check_same_shape(&expected)?;
    let root = SplitRng::new(seed).split("eval-rollout");
    let correct = prompts
        .par_iter()
        .map(|p| {
            let mut rng = root.split_u64(p.prompt_id);
            let mut c = 0;
            for _ in 0..n {
                let s = rollout(params, EngineKind::Train, task, p, task.max_len, temperature, 0, &mut rng)?;
                c += is_correct(task, &s, p) as u64;
            }
            Ok(c)
        })
        .collect::<Result<Vec<u64>>>()?;
    let counts: Vec<(u64, u64)> = correct.iter().map(|&c| (n, c)).collect();
    let pass_at_k = k.iter().map(|&kk| mean_pass_at_k(&counts, kk)).collect::<Result<_>>()?;
    Ok(EvalTable {
        n,
        k: k.to_vec(),
        pass_at_k,
        correct,
    })
}

/// [`evaluate`] with an experiment's eval settings.
pub fn evaluate_config(params: &ParamTable, cfg: &ExperimentConfig, prompts: &[Prompt]) -> Result<EvalTable> {
    let e = &cfg.eval;
    evaluate(params, &cfg.task, prompts, e.samples, &e.k, e.temperature, cfg.seed)
}
