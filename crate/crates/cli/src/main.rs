//! `strokeseq`: generate synthetic handwriting cohorts, extract stroke
//! features, scan window sizes, train recurrent models and ensembles, and
//! compare them.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use strokeseq::neural::CellKind;

use commands::{DataError, Layout, TrainArgs};
use config::ConfigError;

#[derive(Parser)]
#[command(name = "strokeseq", version, about = "Handwriting stroke-sequence experiments on synthetic cohorts")]
struct Cli {
    /// TOML experiment configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set generator.n_ad=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Base seed for fold assignment and training (overrides `seed_base`).
    #[arg(long, global = true)]
    seed_base: Option<u64>,
    /// Worker threads for cross-validation folds (overrides `jobs`).
    #[arg(short, long, global = true)]
    jobs: Option<usize>,
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (subjects and pen recordings).
    Generate,
    /// Validate recordings and extract per-stroke features.
    Extract,
    /// Scan the window-size × stride grid with the Temporal Stability Score.
    Tss,
    /// Cross-validate recurrent models; window defaults to the TSS argmax.
    Train {
        #[arg(long)]
        model: Option<CellKind>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        ws: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Re-evaluate a trained run from its checkpoints.
    Evaluate {
        /// Run name, e.g. `gru-h32-ws60-s1`.
        run: String,
    },
    /// Cross-validate the four stroke-level ensembles.
    Ensemble,
    /// Merge results files into one table sorted by accuracy.
    Compare {
        /// Results files; defaults to every file in `<output>/results`.
        files: Vec<PathBuf>,
    },
    /// Print a results file, or the effective configuration.
    Report {
        file: Option<PathBuf>,
        /// Re-emit the results file as canonical JSON.
        #[arg(long)]
        json: bool,
        /// Print the effective configuration as TOML.
        #[arg(long = "show-config")]
        show_config: bool,
    },
}

/// 0 success, 1 usage or configuration, 2 data, 3 numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    use strokeseq::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 1;
        }
        if cause.is::<DataError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) | E::SingleClass { .. } | E::TooFewSubjects { .. } | E::UnknownTask(_) => 1,
                E::NonFiniteGradient(_) | E::NonFiniteLoss(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = config::load(cli.config.as_deref(), &cli.overrides)?;
    if let Some(o) = cli.output {
        cfg.output_dir = o;
    }
    if let Some(s) = cli.seed_base {
        cfg.seed_base = s;
    }
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(ConfigError("--jobs must be at least 1".into()).into());
        }
        cfg.jobs = j;
    }
    let layout = Layout::new(&cfg.output_dir);
    match cli.command {
        Command::Generate => commands::generate(&cfg, &layout),
        Command::Extract => commands::extract(&layout),
        Command::Tss => commands::tss(&cfg, &layout),
        Command::Train { model, hidden, ws, stride } => {
            commands::train(&cfg, &layout, &TrainArgs { model, hidden, ws, stride })
        }
        Command::Evaluate { run } => commands::evaluate(&layout, &run),
        Command::Ensemble => commands::ensemble(&cfg, &layout),
        Command::Compare { files } => commands::compare(&layout, &files),
        Command::Report { file, json, show_config } => {
            if show_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let file = file.ok_or_else(|| ConfigError("report needs a results file or --show-config".into()))?;
            commands::report(&file, json)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
