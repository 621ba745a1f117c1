//! Command-line interface: subcommands for each pipeline stage, the
//! baselines, and the end-to-end run. Flags override config-file keys,
//! which override built-in defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::FileConfig;
use crate::error::CliError;
use crate::runner::{self, BaselineMethod};

#[derive(Parser)]
#[command(
    name = "sda",
    version,
    about = "Summary-planned dialogue augmentation: summarize seed dialogues, bootstrap new \
             summaries, generate filtered dialogues, and score the result."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// TOML configuration file; omitted keys use built-in defaults.
    #[arg(long, global = false)]
    pub config: Option<PathBuf>,

    /// Seed dialogue pool (JSONL), overrides paths.seed_pool.
    #[arg(long)]
    pub seed_pool: Option<PathBuf>,

    /// Output directory, overrides paths.out_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Seed for all pipeline randomness, overrides rng_seed.
    #[arg(long)]
    pub rng_seed: Option<u64>,

    /// Worker budget for parallelizable stages (reference mode is 1).
    #[arg(long)]
    pub parallelism: Option<usize>,

    /// Dump every generation prompt under <out>/trace/.
    #[arg(long)]
    pub trace_prompts: bool,

    /// Overwrite existing outputs instead of failing.
    #[arg(long)]
    pub force: bool,

    /// Use deterministic mock backends for every provider slot.
    #[arg(long)]
    pub mock_backends: bool,

    /// Repair seed dialogues whose speaker labels are swapped.
    #[arg(long)]
    pub relabel_speakers: bool,

    /// Match stop phrases at word boundaries only.
    #[arg(long)]
    pub stop_word_boundary: bool,
}

#[derive(Subcommand)]
pub enum Command {
    /// Summarize every seed dialogue into s_seed.jsonl.
    Summarize(StageArgs),
    /// Grow the augmented summary pool to augment.m (s_aug.jsonl).
    AugmentSummaries(StageArgs),
    /// Turn augmented summaries into filtered dialogues (d_aug.jsonl).
    Generate(StageArgs),
    /// Score a dialogue pool against the seed pool.
    Evaluate(EvaluateArgs),
    /// Run one comparison augmenter.
    Baseline(BaselineArgs),
    /// Run summarize, augment-summaries, generate, and evaluate in order.
    Pipeline(StageArgs),
}

#[derive(Args)]
pub struct StageArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Pool to evaluate; defaults to <out>/d_aug.jsonl.
    #[arg(long)]
    pub pool: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Mlm,
    Icl,
    IclCtx,
}

impl From<MethodArg> for BaselineMethod {
    fn from(value: MethodArg) -> Self {
        match value {
            MethodArg::Mlm => BaselineMethod::Mlm,
            MethodArg::Icl => BaselineMethod::Icl,
            MethodArg::IclCtx => BaselineMethod::IclCtx,
        }
    }
}

#[derive(Args)]
pub struct BaselineArgs {
    /// Which augmenter to run.
    #[arg(value_enum)]
    pub method: MethodArg,

    #[command(flatten)]
    pub common: CommonArgs,

    /// Dialogues to produce, overrides baseline.count.
    #[arg(long)]
    pub count: Option<usize>,

    /// Context turns for icl-ctx, overrides baseline.context_turns.
    #[arg(long)]
    pub context_turns: Option<usize>,
}

/// Config file + flag overrides, flags winning.
pub fn resolve_config(common: &CommonArgs) -> Result<FileConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(seed) = common.rng_seed {
        config.rng_seed = seed;
    }
    if let Some(path) = &common.seed_pool {
        config.paths.seed_pool = Some(path.clone());
    }
    if let Some(path) = &common.out {
        config.paths.out_dir = Some(path.clone());
    }
    if let Some(parallelism) = common.parallelism {
        if parallelism == 0 {
            return Err(CliError::Config("--parallelism must be at least 1".into()));
        }
        config.run.parallelism = parallelism;
    }
    if common.trace_prompts {
        config.run.trace_prompts = true;
    }
    if common.force {
        config.run.force = true;
    }
    if common.mock_backends {
        config.run.mock_backends = true;
    }
    if common.relabel_speakers {
        config.run.relabel_speakers = true;
    }
    if common.stop_word_boundary {
        config.run.stop_word_boundary = true;
    }
    Ok(config)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Summarize(args) => runner::cmd_summarize(resolve_config(&args.common)?),
        Command::AugmentSummaries(args) => {
            runner::cmd_augment_summaries(resolve_config(&args.common)?)
        }
        Command::Generate(args) => runner::cmd_generate(resolve_config(&args.common)?),
        Command::Evaluate(args) => {
            runner::cmd_evaluate(resolve_config(&args.common)?, args.pool)
        }
        Command::Baseline(args) => runner::cmd_baseline(
            resolve_config(&args.common)?,
            args.method.into(),
            args.count,
            args.context_turns,
        ),
        Command::Pipeline(args) => runner::cmd_pipeline(resolve_config(&args.common)?),
    }
}
