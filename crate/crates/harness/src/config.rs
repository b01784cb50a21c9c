//! Experiment configuration.
//!
//! One TOML document per experiment. Unknown keys anywhere are errors, and
//! every field except `schema_version` and `seed` has a default.

use std::path::{Path, PathBuf};

use asyncrl_core::fusion::{EraseMode, FusionConfig, Normalization};
use asyncrl_core::objective::{AdvantageConfig, ClipConfig};
use asyncrl_core::pipeline::{BufferConfig, StalenessPolicy};
use asyncrl_core::toy_env::{GraderConfig, RepetitionConfig, TaskConfig};
use asyncrl_sim::{DeviceGroupConfig, LengthModel, SchedulerMode, SimConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub grader: GraderConfig,
    #[serde(default)]
    pub clip: ClipConfig,
    #[serde(default)]
    pub advantage: AdvantageConfig,
    #[serde(default)]
    pub staleness: StalenessPolicy,
    #[serde(default)]
    pub buffer: BufferConfig,
    #[serde(default)]
    pub devices: DeviceGroupConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub fusion: Option<FuseSection>,
    /// Output directory; not part of the config hash.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub mode: SchedulerMode,
    /// Training steps; each consumes one batch.
    pub steps: u64,
    pub group_size: usize,
    pub batch_groups: usize,
    /// Objective denominator length; the task's `max_len` when absent.
    pub t_max: Option<usize>,
    pub learning_rate: f64,
    pub temperature: f64,
    /// Standard deviation of the inference engine's logit perturbation.
    pub perturb_scale: f64,
    /// Simulated tokens per toy token, so toy responses take realistic time.
    pub token_scale: u64,
    pub prompt_tokens: u64,
    pub lb_threshold: usize,
    pub max_outstanding_prompts: Option<usize>,
    pub repetition: RepetitionConfig,
    /// Evaluate every this many steps; 0 evaluates only before and after.
    pub eval_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            mode: SchedulerMode::Dora,
            steps: 200,
            group_size: 8,
            batch_groups: 4,
            t_max: None,
            learning_rate: 64.0,
            temperature: 1.0,
            perturb_scale: 0.05,
            token_scale: 64,
            prompt_tokens: 128,
            lb_threshold: 1,
            max_outstanding_prompts: Some(16),
            repetition: RepetitionConfig::default(),
            eval_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Held-out prompts drawn from the task's domain.
    pub prompts: usize,
    /// Rollouts per prompt.
    pub samples: u64,
    pub k: Vec<u64>,
    pub temperature: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            prompts: 64,
            samples: 16,
            k: vec![1, 4, 16],
            temperature: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub modes: Vec<SchedulerMode>,
    pub group_size: usize,
    pub batch_groups: usize,
    pub prompt_tokens: u64,
    pub lengths: LengthModel,
    pub lb_threshold: usize,
    pub max_outstanding_prompts: Option<usize>,
    pub target_batches: Option<u64>,
    pub horizon: Option<u64>,
    pub prompt_limit: Option<u64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let sim = SimConfig::default();
        Self {
            modes: vec![SchedulerMode::Sync, SchedulerMode::Dora],
            group_size: sim.group_size,
            batch_groups: sim.batch_groups,
            prompt_tokens: sim.prompt_tokens,
            lengths: sim.lengths,
            lb_threshold: sim.lb_threshold,
            max_outstanding_prompts: sim.max_outstanding_prompts,
            target_batches: Some(200),
            horizon: None,
            prompt_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseSection {
    /// Shared base checkpoint. Relative paths resolve against the config file.
    pub base: PathBuf,
    pub experts: Vec<PathBuf>,
    #[serde(default)]
    pub normalize: Normalization,
    #[serde(default)]
    pub dropout_p: f64,
    #[serde(default)]
    pub erase: EraseMode,
    #[serde(default)]
    pub merge_weights: Option<Vec<f64>>,
}

impl FuseSection {
    pub fn fusion_config(&self, seed: u64) -> FusionConfig {
        FusionConfig {
            normalize: self.normalize,
            dropout_p: self.dropout_p,
            erase: self.erase,
            merge_weights: self.merge_weights.clone(),
            seed,
        }
    }
}

impl ExperimentConfig {
    /// Defaults everywhere except the seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            task: TaskConfig::default(),
            grader: GraderConfig::default(),
            clip: ClipConfig::default(),
            advantage: AdvantageConfig::default(),
            staleness: StalenessPolicy::default(),
            buffer: BufferConfig::default(),
            devices: DeviceGroupConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            simulate: SimulateSection::default(),
            fusion: None,
            out_dir: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses and validates; relative fusion paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let (Some(f), Some(dir)) = (cfg.fusion.as_mut(), path.parent()) {
            let resolve = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            resolve(&mut f.base);
            f.experts.iter_mut().for_each(resolve);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Parse(e.to_string()))
    }

    pub fn t_max(&self) -> usize {
        self.train.t_max.unwrap_or(self.task.max_len)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.task.validate()?;
        self.grader.validate()?;
        self.clip.validate()?;
        self.advantage.validate()?;
        self.buffer.validate()?;
        let t = &self.train;
        if self.t_max() < self.task.max_len {
            return bad(format!("t_max {} is below max_len {}", self.t_max(), self.task.max_len));
        }
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", t.learning_rate));
        }
        if !(t.temperature > 0.0 && t.temperature.is_finite()) {
            return bad(format!("temperature must be > 0, got {}", t.temperature));
        }
        if !(t.perturb_scale >= 0.0 && t.perturb_scale.is_finite()) {
            return bad(format!("perturb_scale must be >= 0, got {}", t.perturb_scale));
        }
        if t.token_scale == 0 {
            return bad("token_scale must be positive".into());
        }
        self.train_sim_config()?.validate()?;
        let e = &self.eval;
        if e.prompts == 0 {
            return bad("eval.prompts must be positive".into());
        }
        if e.k.is_empty() || e.k.contains(&0) {
            return bad("eval.k needs at least one positive k".into());
        }
        if let Some(&kmax) = e.k.iter().max() {
            if e.samples < kmax {
                return bad(format!("eval.samples {} is below max k {kmax}", e.samples));
            }
        }
        if !(e.temperature > 0.0 && e.temperature.is_finite()) {
            return bad(format!("eval.temperature must be > 0, got {}", e.temperature));
        }
        if self.simulate.modes.is_empty() {
            return bad("simulate.modes must name at least one mode".into());
        }
        for &m in &self.simulate.modes {
            self.simulate_config(m).validate()?;
        }
        if let Some(f) = &self.fusion {
            if f.experts.is_empty() {
                return bad("fusion needs at least one expert".into());
            }
            f.fusion_config(self.seed).validate(f.experts.len())?;
        }
        Ok(())
    }

    /// Simulator settings for a training run.
    pub fn train_sim_config(&self) -> Result<SimConfig> {
        let t = &self.train;
        Ok(SimConfig {
            devices: self.devices.clone(),
            mode: t.mode,
            staleness: self.staleness,
            group_size: t.group_size,
            batch_groups: t.batch_groups,
            prompt_tokens: t.prompt_tokens,
            lengths: LengthModel::default(),
            lb_threshold: t.lb_threshold,
            max_outstanding_prompts: t.max_outstanding_prompts,
            prompt_limit: None,
            seed: self.seed,
            record_trace: true,
        })
    }

    /// Simulator settings for `simulate` under `mode`.
    pub fn simulate_config(&self, mode: SchedulerMode) -> SimConfig {
        let s = &self.simulate;
        SimConfig {
            devices: self.devices.clone(),
            mode,
            staleness: self.staleness,
            group_size: s.group_size,
            batch_groups: s.batch_groups,
            prompt_tokens: s.prompt_tokens,
            lengths: s.lengths,
            lb_threshold: s.lb_threshold,
            max_outstanding_prompts: s.max_outstanding_prompts,
            prompt_limit: s.prompt_limit,
            seed: self.seed,
            record_trace: true,
        }
    }

    /// SHA-256 of the canonical JSON form, excluding `out_dir`.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_takes_defaults() {
        let cfg = ExperimentConfig::from_toml_str("schema_version = 1\nseed = 3\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::with_seed(3));
    }

    #[test]
    fn unknown_keys_are_errors() {
        for doc in [
            "schema_version = 1\nseed = 3\nsede = 4\n",
            "schema_version = 1\nseed = 3\n[train]\nstepz = 4\n",
            "schema_version = 1\nseed = 3\n[devices]\nturbo = true\n",
            "schema_version = 1\nseed = 3\n[clip]\neps = 0.1\n",
        ] {
            assert!(matches!(ExperimentConfig::from_toml_str(doc), Err(HarnessError::Parse(_))), "{doc}");
        }
    }

    #[test]
    fn seed_and_schema_are_required() {
        assert!(ExperimentConfig::from_toml_str("seed = 3\n").is_err());
        assert!(ExperimentConfig::from_toml_str("schema_version = 1\n").is_err());
        assert!(matches!(
            ExperimentConfig::from_toml_str("schema_version = 9\nseed = 3\n"),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn validation_catches_bad_values() {
        let doc = "schema_version = 1\nseed = 1\n[eval]\nsamples = 2\nk = [1, 4]\n";
        assert!(matches!(ExperimentConfig::from_toml_str(doc), Err(HarnessError::Config(_))));
        let doc = "schema_version = 1\nseed = 1\n[devices]\ndecode_rate = 0\n";
        assert!(ExperimentConfig::from_toml_str(doc).is_err());
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let mut cfg = ExperimentConfig::with_seed(9);
        cfg.fusion = Some(FuseSection {
            base: "base.ckpt".into(),
            experts: vec!["a.ckpt".into()],
            normalize: Normalization::MeanOfInputs,
            dropout_p: 0.1,
            erase: EraseMode::SumSign,
            merge_weights: None,
        });
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let mut moved = cfg.clone();
        moved.out_dir = Some("elsewhere".into());
        assert_eq!(moved.hash(), cfg.hash());
        assert_ne!(ExperimentConfig::with_seed(10).hash(), cfg.hash());
    }
}
