//! `cfmw-kit`: reproducible pipelines over the cfmw-core modules.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand};

use crate::config::Settings;

#[derive(Debug, Parser)]
#[command(name = "cfmw-kit", version, about = "Weather synthesis, diffusion restoration, fusion, benchmarks and metrics")]
struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key=value` file supplying defaults for any flag (dashes become underscores).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "CFMW_KIT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Degrade clean images with rain, snow or fog.
    Synth(commands::synth::Args),
    /// Run the deterministic reverse diffusion chain on degraded images.
    Restore(commands::restore::Args),
    /// Patch-embed an RGB/thermal pair and run the fusion block chain.
    Fuse(commands::fuse::Args),
    /// Time and count the SS2D fusion block against the attention baseline.
    Bench(commands::bench::Args),
    /// Image-quality and detection metrics.
    Eval(commands::eval::Args),
    /// Tabulate a noise schedule.
    Schedule(commands::schedule::Args),
}

/// Settings shared by every command.
pub struct Context {
    pub seed: u64,
    pub out: PathBuf,
    pub settings: Settings,
}

fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let seed = settings.value(cli.seed, "seed", 42u64)?;
    let out = settings.value(cli.out, "out", PathBuf::from("out"))?;
    let threads = settings.value(cli.threads, "threads", 1usize)?;
    if threads == 0 {
        bail!("--threads must be at least 1");
    }
    let ctx = Context { seed, out, settings };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().context("building thread pool")?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => commands::synth::run(a, &ctx),
        Command::Restore(a) => commands::restore::run(a, &ctx),
        Command::Fuse(a) => commands::fuse::run(a, &ctx),
        Command::Bench(a) => commands::bench::run(a, &ctx),
        Command::Eval(a) => commands::eval::run(a, &ctx),
        Command::Schedule(a) => commands::schedule::run(a, &ctx),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            eprintln!("cfmw-kit: {}", first.strip_prefix("error: ").unwrap_or(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("cfmw-kit: {msg}");
            ExitCode::FAILURE
        }
    }
}
