use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparsecomm_cli::{
    bandwidth_table, load_scene, replay_curriculum, run_render, run_sweep, AppError,
    ExperimentConfig, Result,
};
use sparsecomm_core::codec::decode_message;
use sparsecomm_core::sim::Mode;

#[derive(Parser)]
#[command(name = "sparsecomm", version, about = "Sparse collaborative perception experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds (overrides seeds).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// train or infer (overrides mode).
    #[arg(long)]
    mode: Option<String>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    parallel: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the seed x epoch x strategy x ratio sweep and write a CSV.
    Sweep(Common),
    /// Trace the background-ratio schedule and mined cell counts.
    Curriculum(Common),
    /// Compare message sizes of the codec models.
    Bandwidth(Common),
    /// Run one round and write heatmaps, the scene and encoded messages.
    Render {
        #[command(flatten)]
        common: Common,
        /// Scene TOML to use instead of generating one from the first seed.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Print an encoded message in readable form.
    DumpMessage {
        path: PathBuf,
    },
    /// Check a config file and print it with all defaults filled in.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seeds) = &common.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(mode) = &common.mode {
        config.mode = mode.parse::<Mode>().map_err(|e| AppError::Config {
            path: "--mode".into(),
            message: e.to_string(),
        })?;
    }
    config.validate()?;
    let out = common.out.clone().unwrap_or_else(|| config.output.dir.clone());
    Ok((config, out))
}

fn with_threads<T: Send>(n: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match n {
        None => f(),
        Some(0) => Err(AppError::Config {
            path: "--parallel".into(),
            message: "must be at least 1".into(),
        }),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| AppError::Config {
                path: "--parallel".into(),
                message: e.to_string(),
            })?
            .install(f),
    }
}

fn report(path: &Path) {
    emit(&format!("wrote {}\n", path.display()));
}

/// Write to stdout, stopping quietly if the reader has gone away.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sweep(c) => {
            let (config, out) = load(&c)?;
            report(&with_threads(c.parallel, || run_sweep(&config, &out))?);
        }
        Command::Curriculum(c) => {
            let (config, out) = load(&c)?;
            report(&with_threads(c.parallel, || replay_curriculum(&config, &out))?);
        }
        Command::Bandwidth(c) => {
            let (config, out) = load(&c)?;
            report(&bandwidth_table(&config, &out)?);
        }
        Command::Render { common, scene } => {
            let (config, out) = load(&common)?;
            let scene = scene.as_deref().map(load_scene).transpose()?;
            let seed = config.seeds[0];
            for p in with_threads(common.parallel, || run_render(&config, &out, seed, scene))? {
                report(&p);
            }
        }
        Command::DumpMessage { path } => {
            let bytes = std::fs::read(&path).map_err(|e| AppError::Io { path: path.clone(), source: e })?;
            emit(&decode_message(&bytes)?.to_text());
        }
        Command::ValidateConfig { config } => {
            let c = ExperimentConfig::load(&config)?;
            emit(&c.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
