//! Command-line experiment runner. Exit codes: 0 success, 2 config error,
//! 3 gate failure, 4 numerical failure.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{IvLabError, Result};
use crate::numerics::Precision;

pub use commands::{Ctx, Stamped};
pub use config::RunConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    #[default]
    F64,
    F32,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Precision {
        match p {
            PrecisionArg::F64 => Precision::F64,
            PrecisionArg::F32 => Precision::F32,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ivlab", version, about = "Instruction-vector laboratory on a toy transformer")]
pub struct Cli {
    /// TOML run configuration (required for every command except report).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Run seed; varies sampling and continual runs, not the world.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Output directory (one self-describing directory per invocation).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Arithmetic precision for model evaluation and training.
    #[arg(long, global = true, value_enum, default_value_t = PrecisionArg::F64)]
    pub precision: PrecisionArg,

    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Train the base model on the synthetic corpus and report competence.
    Pretrain,
    /// Extract per-task activations, CE maps, head sets, and IVs.
    Extract,
    /// Run the continual fine-tuning sequence and write logs + metrics.
    Finetune,
    /// Evaluate a checkpoint on every benchmark task.
    Evaluate,
    /// Join finetune run directories into a method comparison table.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

/// Run one parsed command; library entry point used by `run` and by tests.
pub fn execute(cli: &Cli) -> Result<()> {
    if let Cmd::Report { runs } = &cli.command {
        return commands::cmd_report(runs, &cli.out);
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| IvLabError::Config("--config is required".into()))?;
    let cfg = RunConfig::load(path)?;
    let ctx = Ctx {
        cfg_hash: cfg.hash()?,
        cfg,
        seed: cli.seed,
        out: cli.out.clone(),
        precision: cli.precision.into(),
    };
    match cli.command {
        Cmd::Pretrain => commands::cmd_pretrain(&ctx),
        Cmd::Extract => commands::cmd_extract(&ctx),
        Cmd::Finetune => commands::cmd_finetune(&ctx),
        Cmd::Evaluate => commands::cmd_evaluate(&ctx),
        Cmd::Report { .. } => unreachable!(),
    }
}

pub fn exit_code(err: &IvLabError) -> i32 {
    match err {
        IvLabError::GateFailure { .. } => 3,
        IvLabError::NonFinite(_)
        | IvLabError::Divergence(_)
        | IvLabError::NondeterministicClosure => 4,
        _ => 2,
    }
}

/// Parse the process arguments, run the command, and return the exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
