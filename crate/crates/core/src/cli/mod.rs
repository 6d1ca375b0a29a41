//! Command-line front end: `simulate`, `exponent`, `verify` and `compare`.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::{render, run_command, Command, Rendered};
pub use config::{parse_config, parse_pairs, ConfigError, RunConfig, KEYS};
pub use output::{format_float, DirSink, MemorySink, Sink};

use crate::error::MtemError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Model(#[from] MtemError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 configuration, 3 verification failure, 4 estimation failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Verification(_) => 3,
            CliError::Model(MtemError::Estimation(_) | MtemError::NonFinite) => 4,
            CliError::Model(_) => 2,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mtem", version, about = "Modified truncated Euler-Maruyama simulation and stability checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Simulate paths and write per-path trajectories
    Simulate(RunArgs),
    /// Estimate moment and almost-sure Lyapunov exponents
    Exponent(RunArgs),
    /// Check the step-size condition and both truncation lemmas
    Verify(RunArgs),
    /// Run MTEM and EM on identical Brownian paths
    Compare(RunArgs),
}

/// Flags mirror the config keys and override values read from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// key=value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub sigma: Option<String>,
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub delta: Option<String>,
    #[arg(long)]
    pub steps: Option<String>,
    #[arg(long)]
    pub paths: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub refinement: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    /// Output directory
    #[arg(long)]
    pub out: Option<String>,
    /// Fit window as horizon fractions, e.g. 0.4,1.0
    #[arg(long)]
    pub window: Option<String>,
    #[arg(long)]
    pub workers: Option<String>,
    /// Write every n-th state of each trajectory
    #[arg(long)]
    pub stride: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub trials: Option<String>,
    /// Comma-separated step sizes for verify
    #[arg(long)]
    pub deltas: Option<String>,
    #[arg(long)]
    pub floor: Option<String>,
}

impl RunArgs {
    pub fn overrides(&self) -> Vec<(String, String)> {
        let fields = [
            ("model", &self.model),
            ("mu", &self.mu),
            ("sigma", &self.sigma),
            ("scheme", &self.scheme),
            ("p", &self.p),
            ("delta", &self.delta),
            ("steps", &self.steps),
            ("paths", &self.paths),
            ("seed", &self.seed),
            ("refinement", &self.refinement),
            ("x0", &self.x0),
            ("out", &self.out),
            ("window", &self.window),
            ("workers", &self.workers),
            ("stride", &self.stride),
            ("lambda", &self.lambda),
            ("epsilon", &self.epsilon),
            ("trials", &self.trials),
            ("deltas", &self.deltas),
            ("floor", &self.floor),
        ];
        fields
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect()
    }

    pub fn load(&self) -> Result<RunConfig, CliError> {
        let text = match &self.config {
            Some(path) => Some(std::fs::read_to_string(path).map_err(|e| {
                ConfigError::new("config", format!("cannot read {}: {e}", path.display()))
            })?),
            None => None,
        };
        Ok(parse_config(text.as_deref(), &self.overrides())?)
    }
}

pub fn main_with(cli: Cli) -> ExitCode {
    let (command, args) = match cli.command {
        CliCommand::Simulate(a) => (Command::Simulate, a),
        CliCommand::Exponent(a) => (Command::Exponent, a),
        CliCommand::Verify(a) => (Command::Verify, a),
        CliCommand::Compare(a) => (Command::Compare, a),
    };
    let result = args.load().and_then(|cfg| run_command(command, &cfg));
    match result {
        Ok(rendered) => {
            for note in &rendered.notes {
                eprintln!("{note}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mtem: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
