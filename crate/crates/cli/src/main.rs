//! `netexp`: batch front-end for network-experiment analysis.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use netexp::ErrorKind;
use serde_json::Value;

use crate::config::{apply_override, expand_preset, load_document, parse, set_path, ConfigError};

#[derive(Parser)]
#[command(
    name = "netexp",
    version,
    about = "Design-based inference for network experiments"
)]
struct Cli {
    /// Worker threads for all parallel steps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set design.treat_frac=0.3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate effects and HAC standard errors from observed data.
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Run a Monte-Carlo experiment from a preset or a config.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        preset: Option<String>,
    },
    /// Kernel negative-part diagnostics over a bandwidth grid.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        edges: Option<PathBuf>,
        #[arg(long)]
        directed: bool,
        /// Bandwidths as `lo:hi` or a comma list.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Generalized propensity scores and the effective sample.
    Propensity {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mc_draws: Option<usize>,
    },
}

fn build_config(
    common: &Common,
    flags: Vec<(&str, Value)>,
    simulate: bool,
) -> Result<config::RunConfig> {
    let mut doc = load_document(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        set_path(&mut doc, "seed", seed.into())?;
    }
    if let Some(out) = &common.out {
        set_path(&mut doc, "output_dir", out.display().to_string().into())?;
    }
    for (k, v) in flags {
        set_path(&mut doc, k, v)?;
    }
    if simulate {
        expand_preset(&mut doc)?;
        if let Some(seed) = doc.get("seed").cloned() {
            if doc.get("simulation").is_some() {
                set_path(&mut doc, "simulation.seed", seed)?;
            }
        }
    }
    for o in &common.overrides {
        apply_override(&mut doc, o)?;
    }
    parse(doc)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| config::config_err(format!("cannot start {t} threads: {e}")))?;
    }
    match cli.command {
        Command::Analyze { common } => commands::analyze(&build_config(&common, vec![], false)?),
        Command::Simulate { common, preset } => {
            let flags = preset
                .map(|p| vec![("preset", Value::from(p))])
                .unwrap_or_default();
            commands::simulate(&build_config(&common, flags, true)?)
        }
        Command::Diagnose {
            common,
            edges,
            directed,
            grid,
        } => {
            let mut flags = Vec::new();
            if let Some(e) = edges {
                flags.push(("edges", Value::from(e.display().to_string())));
            }
            if directed {
                flags.push(("directed", Value::from(true)));
            }
            if let Some(g) = grid {
                flags.push(("grid", Value::from(g)));
            }
            commands::diagnose(&build_config(&common, flags, false)?)
        }
        Command::Propensity { common, mc_draws } => {
            let flags = mc_draws
                .map(|m| vec![("mc_draws", Value::from(m))])
                .unwrap_or_default();
            commands::propensity(&build_config(&common, flags, false)?)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<netexp::Error>().map(netexp::Error::kind) {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Data) => 3,
        Some(ErrorKind::Numerical) => 4,
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
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
