//! Command-line front end: config loading, experiment drivers and CSV/SVG output.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod setup;
pub mod svg;

use clap::{Args, Parser, Subcommand};
use commands::{Context, Outcome};
use config::ExperimentConfig;
pub use error::{CliError, Result};
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "rwgd", version, about = "Randomly weighted gradient descent for least squares")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One trajectory plus an ensemble summary
    Simulate(Common),
    /// Exact mean and second moment by recursion
    Moments(Common),
    /// Evaluate every applicable bound
    Bounds(Common),
    /// Convergence comparison of two weightings
    Figure1(Common),
    /// Limiting statistical error of two weightings
    Figure2(Common),
    /// Compare the moment recursion with brute-force enumeration
    Oracle(Common),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON experiment config
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides outputs.csv_dir)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub no_plot: bool,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c)
            | Command::Moments(c)
            | Command::Bounds(c)
            | Command::Figure1(c)
            | Command::Figure2(c)
            | Command::Oracle(c) => c,
        }
    }
}

pub fn context(common: &Common) -> Result<Context> {
    if !common.config.exists() {
        return Err(CliError::Config(format!("config file not found: {}", common.config.display())));
    }
    let (mut cfg, base) = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = commands::out_dir_for(&cfg, common.out.as_deref());
    let plot = cfg.outputs.plot && !common.no_plot;
    Ok(Context { cfg, base, out, plot })
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let common = cli.command.common();
    let ctx = context(common)?;
    output::ensure_dir(&ctx.out)?;
    let go = || match &cli.command {
        Command::Simulate(_) => commands::simulate(&ctx),
        Command::Moments(_) => commands::moments_cmd(&ctx),
        Command::Bounds(_) => commands::bounds_cmd(&ctx),
        Command::Figure1(_) => commands::figure1(&ctx),
        Command::Figure2(_) => commands::figure2(&ctx),
        Command::Oracle(_) => commands::oracle(&ctx),
    };
    match common.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(go),
        None => go(),
    }
}

/// Parse, run and report; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(s) = &out.stdout {
                println!("{s}");
            }
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
