//! `rscn`: command-line driver for robust self-supervised subspace clustering.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rscn::Error;

/// Environment variable that replaces the default output directory.
pub const OUTPUT_DIR_ENV: &str = "RSCN_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "rscn", version, about = "Robust self-supervised convolutional subspace clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set schedule.t_max=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    pub overrides: Vec<(String, String)>,
    /// Output directory [default: $RSCN_OUTPUT_DIR, else runs/<name>].
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the configured dataset to disk (image folders or CSV).
    GenSynth(ConfigArgs),
    /// Pretrain the autoencoder on reconstruction.
    PretrainAe(ConfigArgs),
    /// Add the self-expression layer and pretrain it with the autoencoder.
    PretrainDsc {
        #[command(flatten)]
        args: ConfigArgs,
        /// Autoencoder checkpoint; pretrained from scratch when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Full training with pseudo-label self-supervision.
    Train {
        #[command(flatten)]
        args: ConfigArgs,
        /// Self-expression checkpoint; earlier stages run when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Cluster the dataset from a checkpoint's representation matrix.
    Cluster {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Classify images (a folder, optionally with class subfolders) or CSV rows.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output directory [default: $RSCN_OUTPUT_DIR, else runs/predict].
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run the configured variant on every fold.
    Evaluate {
        #[command(flatten)]
        args: ConfigArgs,
        /// Run a single fold.
        #[arg(long)]
        fold: Option<usize>,
        /// Folds trained in parallel [default: available cores].
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run all four error-measure/regularizer variants on every fold.
    Ablate {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Rebuild report.md from a results.csv.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Output directory [default: the directory holding results.csv].
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(format!("expected KEY=VALUE, got `{s}`")),
    }
}

/// 1 for problems the user can fix (inputs, config, files), 2 otherwise.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Io { .. }
        | Error::Data { .. }
        | Error::Parse { .. }
        | Error::InvalidArgument(_)
        | Error::Checkpoint(_)
        | Error::Shape { .. } => 1,
        Error::NonFinite(_) | Error::Convergence(_) | Error::Diverged { .. } => 2,
    }
}

fn run(cli: Cli) -> rscn::Result<()> {
    match cli.command {
        Command::GenSynth(a) => commands::gen_synth(&a),
        Command::PretrainAe(a) => commands::pretrain_ae(&a),
        Command::PretrainDsc { args, checkpoint } => commands::pretrain_dsc(&args, checkpoint.as_deref()),
        Command::Train { args, checkpoint } => commands::train(&args, checkpoint.as_deref()),
        Command::Cluster { args, checkpoint } => commands::cluster(&args, &checkpoint),
        Command::Predict { checkpoint, input, out } => commands::predict(&checkpoint, &input, out),
        Command::Evaluate { args, fold, jobs } => commands::evaluate(&args, fold, jobs, false),
        Command::Ablate { args, jobs } => commands::evaluate(&args, None, jobs, true),
        Command::Report { results, out } => commands::report(&results, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => {
            eprintln!("internal error: unexpected panic; see the message above");
            ExitCode::from(2)
        }
    }
}
