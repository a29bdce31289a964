use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use derain::cli::{
    cmd_derain, cmd_eval, cmd_synth, cmd_table, cmd_train, error_record, CliError, DerainMode,
    TrainStage,
};
use derain::config::ExperimentConfig;
use derain::dataset::DEFAULT_PATTERN;

/// Desk-scale self-supervised video deraining experiments.
#[derive(Parser)]
#[command(name = "derain", version, about)]
struct Cli {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write rain-corrupted copies of the clean sequences plus a manifest.
    Synth,
    /// Train the denoising stages; writes checkpoints, reports, weights.
    Train {
        #[arg(long, value_enum, default_value_t = StageArg::Both)]
        stage: StageArg,
    },
    /// Apply trained weights to an input sequence directory.
    Derain {
        /// Pipeline weights file written by `train`.
        #[arg(long)]
        weights: PathBuf,
        /// Directory of input frames.
        #[arg(long)]
        input: PathBuf,
        /// Directory for the derained frames.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Full)]
        mode: ModeArg,
        /// Frame file pattern.
        #[arg(long, default_value = DEFAULT_PATTERN)]
        pattern: String,
    },
    /// Score predicted frames against reference frames (CSV + JSON).
    Eval {
        /// Directory of predicted frames.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of reference frames.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Frame file pattern.
        #[arg(long, default_value = DEFAULT_PATTERN)]
        pattern: String,
    },
    /// Train once, then grid the eval densities with and without stage 2.
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Spatial,
    Temporal,
    Both,
}

impl From<StageArg> for TrainStage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Spatial => TrainStage::Spatial,
            StageArg::Temporal => TrainStage::Temporal,
            StageArg::Both => TrainStage::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "spatial-only")]
    SpatialOnly,
    Full,
}

impl From<ModeArg> for DerainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::SpatialOnly => DerainMode::SpatialOnly,
            ModeArg::Full => DerainMode::Full,
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let path = cli.config.as_ref().ok_or(CliError::MissingConfig)?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth => cmd_synth(&load_config(cli)?),
        Command::Train { stage } => cmd_train(&load_config(cli)?, (*stage).into()),
        Command::Derain {
            weights,
            input,
            output,
            mode,
            pattern,
        } => cmd_derain(weights, input, output, (*mode).into(), pattern),
        Command::Eval {
            pred,
            reference,
            pattern,
        } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("derain_eval"));
            cmd_eval(pred, reference, &out, pattern)
        }
        Command::Table => cmd_table(&load_config(cli)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::FAILURE
        }
    }
}
