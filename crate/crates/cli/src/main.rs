//! `percept` command-line driver.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("model error: {0}")]
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Model(_) => 4,
        }
    }
}

impl From<percept::Error> for CliError {
    fn from(e: percept::Error) -> Self {
        use percept::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::Model(_) | E::UnsupportedHead => CliError::Model(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "percept", version, about = "Person-context descriptors and personality-type recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract pers/group/prox descriptor tensors into an archive.
    Extract(Common),
    /// Discover semantic regions of a nonsocial scene.
    Regions(Common),
    /// Train a head on an archive and save the model.
    Train(Common),
    /// Cross-validate descriptor combinations and write the comparison table.
    Eval(Common),
    /// Export the per-frame descriptor trace of one clip and subject.
    Trace(Common),
    /// Compute class activation maps with a linear head model.
    Cam(Common),
    /// Generate a synthetic scene with planted personality types.
    Synth(Common),
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// `--key value` overrides of config keys.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (name, common, f): (&str, Common, fn(&RunConfig) -> Result<output::Outputs, CliError>) = match cli.command {
        Command::Extract(c) => ("extract", c, commands::extract),
        Command::Regions(c) => ("regions", c, commands::regions),
        Command::Train(c) => ("train", c, commands::train),
        Command::Eval(c) => ("eval", c, commands::eval),
        Command::Trace(c) => ("trace", c, commands::trace),
        Command::Cam(c) => ("cam", c, commands::cam),
        Command::Synth(c) => ("synth", c, commands::synth),
    };
    let env_seed = std::env::var(config::SEED_ENV).ok();
    let cfg = RunConfig::load(common.config.as_deref(), &common.overrides, env_seed.as_deref())?;
    let outputs = f(&cfg)?;
    outputs.finish(name, &cfg)?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("percept: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
