use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asyncrl_harness::config::ExperimentConfig;
use asyncrl_harness::{checkpoint, commands, HarnessError, Result};
use asyncrl_sim::SchedulerMode;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "asyncrl", version, about = "Asynchronous RL laboratory: train, simulate, fuse and evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scheduler mode; overrides the config.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sync,
    Naive,
    Dora,
}

impl From<Mode> for SchedulerMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Sync => SchedulerMode::Sync,
            Mode::Naive => SchedulerMode::NaivePartial,
            Mode::Dora => SchedulerMode::Dora,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy end to end under a scheduler.
    Train {
        #[command(flatten)]
        common: Common,
        /// Start from this checkpoint instead of zero logits.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Compare schedulers on the abstract workload.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Merge expert checkpoints listed in the config's [fusion] section.
    Fuse {
        #[command(flatten)]
        common: Common,
    },
    /// pass@k of a checkpoint on the held-out set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare two JSONL traces; exits 1 when they differ.
    TraceDiff { left: PathBuf, right: PathBuf },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match (&common.config, common.seed) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(seed)) => ExperimentConfig::with_seed(seed),
        (None, None) => return Err(HarnessError::Config("pass --config or --seed".into())),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.train.mode = mode.into();
        cfg.simulate.modes = vec![mode.into()];
    }
    cfg.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train { common, init } => {
            let (cfg, out) = load(&common)?;
            let initial = init.as_deref().map(checkpoint::load).transpose()?;
            let outcome = commands::cmd_train(&cfg, &out, initial)?;
            print_json(&outcome.summary)?;
        }
        Command::Simulate { common } => {
            let (cfg, out) = load(&common)?;
            let (_, summary) = commands::cmd_simulate(&cfg, &out)?;
            print_json(&summary)?;
        }
        Command::Fuse { common } => {
            let (cfg, out) = load(&common)?;
            let (_, summary) = commands::cmd_fuse(&cfg, &out)?;
            print_json(&summary)?;
        }
        Command::Eval { common, checkpoint } => {
            let (cfg, out) = load(&common)?;
            let (_, summary) = commands::cmd_eval(&cfg, Path::new(&checkpoint), &out)?;
            print_json(&summary)?;
        }
        Command::TraceDiff { left, right } => {
            let diff = commands::cmd_trace_diff(&left, &right)?;
            print_json(&diff)?;
            if !diff.identical {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(2)
        }
    }
}
