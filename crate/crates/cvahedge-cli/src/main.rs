//! Scenario-driven front end for the counterparty-risk hedging engine.
//!
//! ```text
//! cvahedge --scenario scenarios/cds_n1.toml --mode hedge --threads 4 --out out/
//! ```
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

use clap::Parser;
use cvahedge_cli::scenario::{Mode, Scenario};
use cvahedge_cli::{run, CliError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "cvahedge", version, about = "Counterparty-risk pricing and hedging engine")]
struct Cli {
    /// Scenario file (TOML or JSON).
    #[arg(long, env = "CVAHEDGE_SCENARIO")]
    scenario: PathBuf,

    /// Run mode; overrides the scenario's `mode` field.
    #[arg(long, value_enum, env = "CVAHEDGE_MODE")]
    mode: Option<Mode>,

    /// Seed override.
    #[arg(long, env = "CVAHEDGE_SEED")]
    seed: Option<u64>,

    /// Worker threads (0 = available parallelism).
    #[arg(long, default_value_t = 0, env = "CVAHEDGE_THREADS")]
    threads: usize,

    /// Output directory override.
    #[arg(long, env = "CVAHEDGE_OUT")]
    out: Option<PathBuf>,
}

fn try_main(cli: Cli) -> Result<(), CliError> {
    let mut scenario = Scenario::load(&cli.scenario)?;
    if let Some(seed) = cli.seed {
        scenario.sim.seed = seed;
    }
    let mode = cli
        .mode
        .or(scenario.mode)
        .ok_or_else(|| CliError::Config("no mode given (set --mode or the scenario's mode field)".into()))?;
    let out_dir = cli.out.unwrap_or_else(|| PathBuf::from(&scenario.output.dir));
    let ctx = run::RunContext { scenario, mode, threads: cli.threads, out_dir };
    run::run(&ctx)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match try_main(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
