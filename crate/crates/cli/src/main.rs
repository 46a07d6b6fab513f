// SPDX-License-Identifier: MIT OR Apache-2.0

//! `editlab`: generate a corpus, train, trace, edit and audit.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use editlab::evalsuite::MetricKind;

use commands::CliError;
use config::{Overrides, RunConfig};
use manifest::Run;

#[derive(Parser)]
#[command(name = "editlab", version, about = "Locate-then-edit model editing with a negation-aware audit")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts and the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `exact` or `prob`.
    #[arg(long, global = true)]
    metric: Option<MetricKind>,
    /// Comma-separated layers to edit, bypassing tracing.
    #[arg(long, global = true, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    n_batches: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the fact corpus.
    Generate,
    /// Train the base model.
    Train,
    /// Trace facts and choose the layers to edit.
    Trace,
    /// Apply the positive edits and save the edited model.
    Edit,
    /// Edit with both polarities and score all four settings.
    Quadrants,
    /// Fact-check the edit targets before and after editing.
    Factcheck,
    /// Check the harness against oracles with known behaviour.
    Selftest,
    /// Recompute discrepancy columns of published tables.
    TableAudit {
        /// Table CSV; the bundled published tables when omitted.
        path: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Selftest => return commands::cmd_selftest(),
        Command::TableAudit { path } => return commands::cmd_table_audit(path.as_deref()),
        _ => {}
    }
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        metric: cli.metric,
        layers: cli.layers.clone(),
        batch_size: cli.batch_size,
        n_batches: cli.n_batches,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides).map_err(|e| CliError::Validation(e.to_string()))?;
    let mut run = Run::open(&cfg)?;
    run.save()?;
    match cli.command {
        Command::Generate => commands::cmd_generate(&cfg, &mut run),
        Command::Train => commands::cmd_train(&cfg, &mut run),
        Command::Trace => commands::cmd_trace(&cfg, &mut run),
        Command::Edit => commands::cmd_edit(&cfg, &mut run),
        Command::Quadrants => commands::cmd_quadrants(&cfg, &mut run),
        Command::Factcheck => commands::cmd_factcheck(&cfg, &mut run),
        Command::Selftest | Command::TableAudit { .. } => unreachable!("handled above"),
    }
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
