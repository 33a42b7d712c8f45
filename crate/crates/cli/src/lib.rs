//! Command-line front end: verification suites and per-module subcommands.

pub mod checks;
pub mod commands;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::report::{CliError, Format, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "hamrearr", version, about = "Rearrangement functionals, Hamiltonian flows and Hessian invariants")]
pub struct Cli {
    /// Seed for every randomized check (overrides RL_SEED and --config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with `seed`, `output`, `format`, `timings` and a
    /// `[tolerances]` table keyed by check id.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Report format for `suite`; other subcommands always emit JSON.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rearrangement suprema, inequalities and transport on function files.
    Rearrange(commands::RearrangeArgs),
    /// Support-family functionals.
    #[command(subcommand)]
    Functional(commands::FunctionalOp),
    /// Hamiltonian flows on quadratic or grid Hamiltonians.
    Flow(commands::FlowArgs),
    /// Critical points and the functional p of a grid field.
    Hessian(commands::HessianArgs),
    /// Run verification checks by id (all when none are given).
    Suite {
        /// Check ids; `--list` prints them.
        ids: Vec<String>,
        #[arg(long)]
        all: bool,
        #[arg(long)]
        list: bool,
        /// Include wall-clock `runtime_ms` in each report.
        #[arg(long)]
        timings: bool,
    },
}

/// Runs the parsed command and returns the text to emit and whether every
/// check held.
pub fn execute(cli: &Cli, env_seed: Option<&str>) -> Result<(String, bool, RunConfig), CliError> {
    let config = RunConfig::resolve(cli.config.as_deref(), env_seed, cli.seed, cli.out.clone(), cli.format)?;
    let json = |v: serde_json::Value| {
        let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
        s.push('\n');
        s
    };
    Ok(match &cli.command {
        Command::Rearrange(args) => (json(commands::rearrange(args)?), true, config),
        Command::Functional(op) => (json(commands::functional(op, config.seed)?), true, config),
        Command::Flow(args) => (json(commands::flow_command(args)?), true, config),
        Command::Hessian(args) => (json(commands::hessian_command(args)?), true, config),
        Command::Suite { ids, all, list, timings } => {
            if *list {
                let lines: String =
                    checks::CHECKS.iter().map(|c| format!("{}\t{}\n", c.id, c.reference)).collect();
                return Ok((lines, true, config));
            }
            let mut config = config;
            config.timings |= *timings;
            let names = if *all { report::all_check_ids() } else { ids.clone() };
            let reports = report::run_suite(&names, &config)?;
            let holds = reports.iter().all(|r| r.holds);
            (report::render(&reports, config.format), holds, config)
        }
    })
}
