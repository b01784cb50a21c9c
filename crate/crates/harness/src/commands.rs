//! Subcommand implementations. Each writes its artifacts atomically into
//! an output directory and returns a summary naming every artifact with its
//! SHA-256.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use asyncrl_core::fusion::{merge, task_vector, FusionReport};
use asyncrl_core::ParamTable;
use asyncrl_sim::{AbstractWorkload, SchedulerMode, SimReport, Simulator, StopCondition};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::eval::{eval_set, evaluate_config, EvalTable};
use crate::live::{EvalPoint, LiveWorkload, StepRecord};
use crate::trace::{diff_files, write_jsonl, TraceDiff};

pub const RUN_RECORD: &str = "run_record.json";
pub const TRAIN_TRACE: &str = "trace.jsonl";
pub const STEPS_TRACE: &str = "steps.jsonl";
pub const BASE_CHECKPOINT: &str = "base.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const SIMULATE_REPORT: &str = "simulate.json";
pub const FUSED_CHECKPOINT: &str = "fused.ckpt";
pub const FUSE_REPORT: &str = "fuse_report.json";
pub const EVAL_REPORT: &str = "eval.json";

/// Artifact file names mapped to their SHA-256.
pub type Artifacts = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandSummary {
    pub command: String,
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub artifacts: Artifacts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalPoint>,
    pub initial_eval: EvalTable,
    pub final_eval: EvalTable,
    pub sim_report: SimReport,
    /// Event trace, relative to the record's directory.
    pub trace_path: String,
    pub trace_sha256: String,
    pub checkpoint_path: String,
    pub checkpoint_sha256: String,
}

impl RunRecord {
    /// Loads a record and checks its stored config hash.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        let rec: Self = serde_json::from_slice(&bytes)?;
        let actual = rec.config.hash();
        if actual != rec.config_hash {
            return Err(HarnessError::HashMismatch {
                stored: rec.config_hash,
                actual,
            });
        }
        Ok(rec)
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, artifacts: &mut Artifacts) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    checkpoint::write_atomic(&dir.join(name), &bytes)?;
    artifacts.insert(name.to_string(), crate::trace::sha256_hex(&bytes));
    Ok(())
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))
}

fn summary(command: &str, out: &Path, cfg: &ExperimentConfig, artifacts: Artifacts) -> CommandSummary {
    CommandSummary {
        command: command.to_string(),
        out_dir: out.to_path_buf(),
        config_hash: cfg.hash(),
        artifacts,
    }
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub final_params: ParamTable,
    pub summary: CommandSummary,
}

/// Runs the full generate, filter, recompute, train and sync loop under the
/// configured scheduler for `train.steps` steps, starting from `initial`
/// (all-zero logits when absent).
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, initial: Option<ParamTable>) -> Result<TrainOutcome> {
    cfg.validate()?;
    prepare_out(out)?;
    let initial = initial.unwrap_or_else(|| ParamTable::for_task(&cfg.task));
    let mut artifacts = Artifacts::new();
    artifacts.insert(BASE_CHECKPOINT.into(), checkpoint::save(&out.join(BASE_CHECKPOINT), &initial)?);

    let prompts = eval_set(cfg)?;
    let mut workload = LiveWorkload::new(cfg, initial, prompts.clone())?;
    let initial_eval = workload.evaluate_initial()?;
    let mut sim = Simulator::new(cfg.train_sim_config()?, workload)?;
    let (sim_report, _) = sim.run(StopCondition {
        horizon: None,
        target_batches: Some(cfg.train.steps),
    })?;
    let trace = sim.take_trace();
    workload = sim.into_workload();

    let (_, final_params) = workload.latest();
    let final_params = (*final_params).clone();
    let final_eval = if cfg.train.steps == 0 {
        initial_eval.clone()
    } else {
        evaluate_config(&final_params, cfg, &prompts)?
    };
    let trace_sha256 = write_jsonl(&out.join(TRAIN_TRACE), &trace)?;
    artifacts.insert(TRAIN_TRACE.into(), trace_sha256.clone());
    artifacts.insert(STEPS_TRACE.into(), write_jsonl(&out.join(STEPS_TRACE), workload.steps())?);
    let checkpoint_sha256 = checkpoint::save(&out.join(FINAL_CHECKPOINT), &final_params)?;
    artifacts.insert(FINAL_CHECKPOINT.into(), checkpoint_sha256.clone());

    let record = RunRecord {
        config_hash: cfg.hash(),
        config: cfg.clone(),
        steps: workload.steps().to_vec(),
        evals: workload.evals().to_vec(),
        initial_eval,
        final_eval,
        sim_report,
        trace_path: TRAIN_TRACE.into(),
        trace_sha256,
        checkpoint_path: FINAL_CHECKPOINT.into(),
        checkpoint_sha256,
    };
    write_json(out, RUN_RECORD, &record, &mut artifacts)?;
    Ok(TrainOutcome {
        record,
        final_params,
        summary: summary("train", out, cfg, artifacts),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: SchedulerMode,
    pub report: SimReport,
    pub trace_path: String,
    pub trace_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub config_hash: String,
    pub reports: Vec<ModeReport>,
    /// Dora batches/tick over Sync batches/tick when both ran.
    pub speedup: Option<f64>,
}

/// Runs the abstract workload under each configured mode on the same seed.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<(SimulateReport, CommandSummary)> {
    cfg.validate()?;
    prepare_out(out)?;
    let mut artifacts = Artifacts::new();
    let mut reports = Vec::new();
    for &mode in &cfg.simulate.modes {
        let sim_cfg = cfg.simulate_config(mode);
        let workload = AbstractWorkload::new(cfg.seed, sim_cfg.lengths);
        let mut sim = Simulator::new(sim_cfg, workload)?;
        let (report, _) = sim.run(StopCondition {
            horizon: cfg.simulate.horizon,
            target_batches: cfg.simulate.target_batches,
        })?;
        let name = format!("trace-{}.jsonl", mode.name());
        let sha = write_jsonl(&out.join(&name), sim.trace())?;
        artifacts.insert(name.clone(), sha.clone());
        reports.push(ModeReport {
            mode,
            report,
            trace_path: name,
            trace_sha256: sha,
        });
    }
    let rate = |m: SchedulerMode| {
        reports
            .iter()
            .find(|r| r.mode == m)
            .map(|r| r.report.batches_per_tick)
    };
    let speedup = match (rate(SchedulerMode::Dora), rate(SchedulerMode::Sync)) {
        (Some(d), Some(s)) if s > 0.0 => Some(d / s),
        _ => None,
    };
    let report = SimulateReport {
        config_hash: cfg.hash(),
        reports,
        speedup,
    };
    write_json(out, SIMULATE_REPORT, &report, &mut artifacts)?;
    Ok((report, summary("simulate", out, cfg, artifacts)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuseOutput {
    pub config_hash: String,
    pub base: PathBuf,
    pub experts: Vec<PathBuf>,
    pub fusion: FusionReport,
    pub checkpoint_sha256: String,
}

/// Merges the configured expert checkpoints into the base. Every input is
/// read and validated before anything is written.
pub fn cmd_fuse(cfg: &ExperimentConfig, out: &Path) -> Result<(FuseOutput, CommandSummary)> {
    cfg.validate()?;
    let section = cfg
        .fusion
        .as_ref()
        .ok_or_else(|| HarnessError::Config("fuse needs a [fusion] section".into()))?;
    let base = checkpoint::load(&section.base)?;
    let mut taus = Vec::with_capacity(section.experts.len());
    for path in &section.experts {
        let expert = checkpoint::load(path)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        taus.push(task_vector(&expert, &base, label)?);
    }
    let (fused, fusion) = merge(&base, &taus, &section.fusion_config(cfg.seed))?;
    prepare_out(out)?;
    let mut artifacts = Artifacts::new();
    let checkpoint_sha256 = checkpoint::save(&out.join(FUSED_CHECKPOINT), &fused)?;
    artifacts.insert(FUSED_CHECKPOINT.into(), checkpoint_sha256.clone());
    let output = FuseOutput {
        config_hash: cfg.hash(),
        base: section.base.clone(),
        experts: section.experts.clone(),
        fusion,
        checkpoint_sha256,
    };
    write_json(out, FUSE_REPORT, &output, &mut artifacts)?;
    Ok((output, summary("fuse", out, cfg, artifacts)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub config_hash: String,
    pub checkpoint: PathBuf,
    pub checkpoint_sha256: String,
    pub table: EvalTable,
}

/// pass@k of a checkpoint on the experiment's held-out set.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint_path: &Path, out: &Path) -> Result<(EvalOutput, CommandSummary)> {
    cfg.validate()?;
    let params = checkpoint::load(checkpoint_path)?;
    let table = evaluate_config(&params, cfg, &eval_set(cfg)?)?;
    prepare_out(out)?;
    let mut artifacts = Artifacts::new();
    let output = EvalOutput {
        config_hash: cfg.hash(),
        checkpoint: checkpoint_path.to_path_buf(),
        checkpoint_sha256: crate::trace::file_sha256(checkpoint_path)?,
        table,
    };
    write_json(out, EVAL_REPORT, &output, &mut artifacts)?;
    Ok((output, summary("eval", out, cfg, artifacts)))
}

pub fn cmd_trace_diff(left: &Path, right: &Path) -> Result<TraceDiff> {
    diff_files(left, right)
}
