//! `ntml`: generate noisy two-modality benchmarks, train on them and merge
//! the results into comparison tables.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

mod commands;
mod config;
mod output;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ntml", version, about = "Noise-tolerant two-modality learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a noisy train split, a clean test split and a noise audit.
    Generate(GenerateArgs),
    /// Train on a generated dataset and write per-epoch and per-sample reports.
    Train(TrainArgs),
    /// Merge finished runs into accuracy grids and plot-ready tables.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Sweep {
    Gamma,
    LabelRate,
    CorrespondenceRate,
}

impl Sweep {
    pub fn name(self) -> &'static str {
        match self {
            Sweep::Gamma => "gamma",
            Sweep::LabelRate => "label-rate",
            Sweep::CorrespondenceRate => "correspondence-rate",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            Sweep::Gamma => (0..=10).map(|i| i as f64 / 10.0).collect(),
            Sweep::LabelRate => vec![0.2, 0.4, 0.6, 0.8],
            Sweep::CorrespondenceRate => vec![0.1, 0.2, 0.3, 0.4],
        }
    }
}

/// Training method: plain cross-entropy, or one contrastive variant of the
/// full procedure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Baseline,
    None,
    InsOnly,
    CatOnly,
    Full,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory, overriding `dataset_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Generator seed, overriding `generator.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Write one dataset per noise rate into `<out>/<sweep>-<rate>`.
    #[arg(long, value_enum)]
    sweep: Option<Sweep>,
    /// Comma-separated sweep values replacing the defaults.
    #[arg(long, value_delimiter = ',', requires = "sweep")]
    values: Vec<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run directory, overriding `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training seed, overriding `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Sweep γ, or train on every dataset written by a matching
    /// `generate --sweep`.
    #[arg(long, value_enum)]
    sweep: Option<Sweep>,
    #[arg(long, value_delimiter = ',', requires = "sweep")]
    values: Vec<f64>,
    /// Run all four contrastive variants.
    #[arg(long, conflicts_with = "variant")]
    ablate: bool,
    /// Defaults to `train.variant` from the config.
    #[arg(long, value_enum)]
    variant: Option<Method>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories, searched recursively.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Bins of the weight histogram over [0, 1].
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

fn usage_error(msg: &str) -> ExitCode {
    let err = Cli::command().error(clap::error::ErrorKind::ArgumentConflict, msg);
    let _ = err.print();
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(if err.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Generate(a) => {
            if a.sweep == Some(Sweep::Gamma) {
                return usage_error("generate can only sweep label-rate or correspondence-rate");
            }
            commands::generate(&commands::GenerateOpts {
                config: a.config,
                out: a.out,
                seed: a.seed,
                sweep: a.sweep.map(|s| (s, values_or_default(s, a.values))),
            })
        }
        Command::Train(a) => {
            let methods = if a.ablate {
                vec![Method::None, Method::InsOnly, Method::CatOnly, Method::Full]
            } else {
                a.variant.into_iter().collect()
            };
            commands::train(&commands::TrainOpts {
                config: a.config,
                out: a.out,
                seed: a.seed,
                sweep: a.sweep.map(|s| (s, values_or_default(s, a.values))),
                methods,
            })
        }
        Command::Report(a) => {
            if a.bins == 0 {
                return usage_error("--bins must be at least 1");
            }
            report::run(&a.runs, &a.out, a.bins)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn values_or_default(s: Sweep, values: Vec<f64>) -> Vec<f64> {
    if values.is_empty() {
        s.default_values()
    } else {
        values
    }
}
