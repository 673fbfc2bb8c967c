//! `recogtrf`: word recognition and temporal receptive field models from the command line.
//!
//! Exit codes: 0 on success, 1 for invalid input or configuration, 2 for
//! runtime and numerical failures.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use recogtrf::linking::LinkingVariant;

#[derive(Debug, Parser)]
#[command(
    name = "recogtrf",
    version,
    about = "Incremental word recognition and EEG encoding models"
)]
pub struct Cli {
    /// Run configuration (TOML or JSON); a synthesis configuration for `simulate`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving every output and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recognition point and time of every word token.
    Recognize(RecognizeArgs),
    /// Hyperparameter search, final refit and held-out evaluation of one linking variant.
    Fit(FitArgs),
    /// Per-sensor Pearson r between observed and predicted recordings.
    Eval(EvalArgs),
    /// Paired t-test between the held-out scores of two fits.
    Compare(CompareArgs),
    /// Synthetic study with known recognition times and kernels.
    Simulate,
}

#[derive(Debug, Args)]
pub struct RecognizeArgs {
    /// Recognition threshold.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Evidence temperature.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Scatter point within the recognising phoneme.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Scatter point within the first phoneme for words recognised before any input.
    #[arg(long)]
    pub alpha_prior: Option<f64>,
    /// Also write every candidate's posterior at every prefix length.
    #[arg(long)]
    pub trajectories: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Overrides the configured linking variant.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<LinkingVariant>,
    /// Overrides the configured trial budget.
    #[arg(long)]
    pub budget: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Observed recording, or a directory of them.
    #[arg(long)]
    pub observed: PathBuf,
    /// Predicted recording, or a directory matched to the observed ones by file stem.
    #[arg(long)]
    pub predicted: PathBuf,
    /// Start of the scored window in seconds.
    #[arg(long)]
    pub start_s: Option<f64>,
    /// End of the scored window in seconds.
    #[arg(long)]
    pub end_s: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Output directory of the first fit.
    #[arg(long)]
    pub a: PathBuf,
    /// Output directory of the second fit.
    #[arg(long)]
    pub b: PathBuf,
}

fn parse_variant(s: &str) -> Result<LinkingVariant, String> {
    LinkingVariant::ALL
        .into_iter()
        .find(|v| v.as_str() == s)
        .ok_or_else(|| {
            let names: Vec<&str> = LinkingVariant::ALL.iter().map(|v| v.as_str()).collect();
            format!(
                "unknown variant {s:?}; expected one of {}",
                names.join(", ")
            )
        })
}

/// Bad input detected by the command line itself rather than the library.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<recogtrf::Error>() {
            return if e.is_validation() { 1 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
