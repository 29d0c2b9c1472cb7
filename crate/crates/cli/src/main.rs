use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::parse_param;

#[derive(Debug, Parser)]
#[command(name = "deid", version, about = "DICOM de-identification pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Clone, Args, Default)]
pub struct Common {
    /// TOML config file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub filter: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub scrub: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub anon: Option<PathBuf>,
    #[arg(long = "in", global = true, value_name = "DIR")]
    pub input: Option<PathBuf>,
    #[arg(long = "out", global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Minimum (and, without --max-workers, maximum) pool size.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    pub max_workers: Option<usize>,
    /// Delivery window in seconds.
    #[arg(long, global = true, value_name = "SECONDS")]
    pub window: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Script parameter, repeatable.
    #[arg(long = "param", global = true, value_name = "KEY=VALUE", value_parser = parse_param)]
    pub params: Vec<(String, String)>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the three scripts and print diagnostics.
    Validate,
    /// De-identify a directory tree directly, without a queue.
    Run,
    /// Validate accessions, create mappings and spool work items.
    Submit(commands::SubmitArgs),
    /// Drain a spool with an autoscaled worker pool.
    Pool(commands::PoolArgs),
    /// Run a regression suite over fixture directories.
    Regress(commands::RegressArgs),
    /// Generate a synthetic corpus with its ground-truth ledger.
    Synth(commands::SynthArgs),
    /// Throughput at several worker counts over a synthetic corpus.
    Bench(commands::BenchArgs),
    /// Mapping store administration.
    Map {
        /// Mapping store file.
        #[arg(long, value_name = "PATH")]
        store: Option<PathBuf>,
        #[command(subcommand)]
        action: commands::MapAction,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let settings = match commands::Settings::new(&cli.common) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Validate => commands::validate(&settings),
        Command::Run => commands::run(&settings),
        Command::Submit(a) => commands::submit(&settings, &a),
        Command::Pool(a) => commands::pool(&settings, &a),
        Command::Regress(a) => commands::regress(&settings, &a),
        Command::Synth(a) => commands::synth(&settings, &a),
        Command::Bench(a) => commands::bench(&settings, &a),
        Command::Map { store, action } => commands::map(&settings, store, &action),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
