//! `radsym`: runs one JSON-configured experiment per invocation.
//!
//! Exit codes: 0 success or verdict true, 1 verdict false, 2 usage or I/O
//! error, 3 invariant violation in the input.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Command, RunConfig};

#[derive(Parser)]
#[command(name = "radsym", version, about = "Discrete symmetrization experiments")]
struct Cli {
    #[command(subcommand)]
    action: Action,
}

#[derive(Subcommand)]
enum Action {
    /// Run the command described by a JSON config.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a complete example config for a command.
    Example {
        #[arg(value_enum)]
        command: Command,
    },
}

fn load_config(path: &PathBuf) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.action {
        Action::Example { command } => {
            println!("{}", serde_json::to_string_pretty(&config::example(command)).expect("config serializes"));
            ExitCode::SUCCESS
        }
        Action::Run { config, out } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            match commands::run(&cfg, &dir) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => {
                    eprintln!("{}: verdict false; see {}", cfg.command.name(), dir.join("report.json").display());
                    ExitCode::from(1)
                }
                Err(f) => {
                    eprintln!("error: {}", f.message());
                    ExitCode::from(f.exit_code())
                }
            }
        }
    }
}
