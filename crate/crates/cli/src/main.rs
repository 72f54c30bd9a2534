mod bundle;
mod commands;
mod config;
mod exit;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ddreg::SynthesisMode;

use crate::commands::Layout;
use crate::config::Resolved;
use crate::exit::CliError;

#[derive(Parser)]
#[command(name = "ddreg", version, about = "Data-driven output regulator synthesis for nonlinear plants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML configuration file, or `example1`, `example2`, `example3`.
    #[arg(long)]
    config: String,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Nonlinear,
    Linear,
    Stabilization,
}

impl From<ModeArg> for SynthesisMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Nonlinear => SynthesisMode::Nonlinear,
            ModeArg::Linear => SynthesisMode::Linear,
            ModeArg::Stabilization => SynthesisMode::Stabilization,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiments and write the data bundle.
    Collect {
        #[command(flatten)]
        common: Common,
    },
    /// Solve the synthesis program on a data bundle.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Data bundle directory (defaults to `<out>/data`).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Simulate the closed loop from every configured initial condition.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Result bundle directory (defaults to `<out>/result`).
        #[arg(long)]
        result: Option<PathBuf>,
    },
    /// Audit a result bundle.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        result: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Skip every check that needs the true plant matrices.
        #[arg(long)]
        no_ground_truth: bool,
    },
    /// Full pipeline on a built-in example.
    Example {
        id: u8,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn resolve(config: &str, seed: Option<u64>) -> Result<(Resolved, u64), CliError> {
    let mut cfg = config::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let seed = cfg.seed;
    Ok((cfg.resolve()?, seed))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Collect { common } => {
            let (r, _) = resolve(&common.config, common.seed)?;
            commands::collect(&r, &Layout::new(&common.out).data()).map(|_| ())
        }
        Command::Synthesize { common, data, mode } => {
            let (r, _) = resolve(&common.config, common.seed)?;
            let layout = Layout::new(&common.out);
            let data = data.unwrap_or_else(|| layout.data());
            commands::synthesize(&r, &data, &layout.result(), mode.map(Into::into)).map(|_| ())
        }
        Command::Simulate { common, result } => {
            let (r, _) = resolve(&common.config, common.seed)?;
            let layout = Layout::new(&common.out);
            commands::simulate(&r, &result.unwrap_or_else(|| layout.result()), &layout.sim())
        }
        Command::Verify { common, result, data, no_ground_truth } => {
            let (r, seed) = resolve(&common.config, common.seed)?;
            let layout = Layout::new(&common.out);
            commands::verify_bundle(
                &r,
                &result.unwrap_or_else(|| layout.result()),
                &data.unwrap_or_else(|| layout.data()),
                &layout.verify(),
                seed,
                !no_ground_truth,
            )
        }
        Command::Example { id, out, seed } => {
            let (r, seed) = resolve(&format!("example{id}"), seed)?;
            commands::example(&r, &Layout::new(&out), seed, true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
