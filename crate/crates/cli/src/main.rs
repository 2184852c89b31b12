//! `efpmm <command> --config <path.json> [--seed N] [--out DIR]`
//!
//! Exit codes: 0 success, 1 numerical failure, 2 config error.

mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use efpmm::sim::{threads_from_env, with_threads};
use serde::de::DeserializeOwned;
use serde::Serialize;

use commands::{data, policy, simulate};
use config::Experiment;
use error::CliError;
use output::{Output, RunInfo};

#[derive(Parser)]
#[command(name = "efpmm", version, about = "Spot/futures market-making experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Riccati system and dump A(t), B(t)
    Solve(RunArgs),
    /// Quotes and hedging rates against spot inventory
    Ladder(RunArgs),
    /// Inventory relaxation after a large client trade
    Relax(RunArgs),
    /// No-execution zones against the normalised EFP deviation
    Zones(RunArgs),
    /// Top-of-book skew over inventory and EFP deviation
    Skewmap(RunArgs),
    /// Skew and execution onset against the mean-level volatility
    NestedSweep(RunArgs),
    /// Volume shares and hourly P&L against risk aversion
    Frontier(RunArgs),
    /// Quoted spreads with and without futures hedging
    SpreadCompare(RunArgs),
    /// Replay a price series with simulated client flow
    Backtest(RunArgs),
    /// Mean-level filter on synthetic data
    FilterDemo(RunArgs),
    /// Fit the nested EFP dynamics to a series
    Calibrate(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

type Body<K> = fn(&Experiment<K>, &mut Output) -> Result<(), CliError>;

fn execute<K>(name: &str, args: &RunArgs, body: Body<K>) -> Result<(), CliError>
where
    K: DeserializeOwned + Serialize + Default + Sync,
{
    let started = Instant::now();
    let exp = Experiment::<K>::load(&args.config, args.seed)?;
    let mut out = Output::create(&args.out)?;
    let threads = threads_from_env();
    with_threads(threads, || body(&exp, &mut out))??;
    out.write_manifest(&RunInfo {
        command: name,
        config: Path::new(&args.config),
        seed: exp.seed,
        threads,
        params: serde_json::to_value(&exp.params)?,
        solve: serde_json::to_value(exp.solve)?,
        knobs: serde_json::to_value(&exp.knobs)?,
        started,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => execute("solve", a, policy::solve),
        Command::Ladder(a) => execute("ladder", a, policy::ladder),
        Command::Relax(a) => execute("relax", a, simulate::relax),
        Command::Zones(a) => execute("zones", a, policy::zones),
        Command::Skewmap(a) => execute("skewmap", a, policy::skewmap),
        Command::NestedSweep(a) => execute("nested-sweep", a, policy::nested_sweep),
        Command::Frontier(a) => execute("frontier", a, simulate::frontier),
        Command::SpreadCompare(a) => execute("spread-compare", a, policy::spread_compare),
        Command::Backtest(a) => execute("backtest", a, simulate::backtest),
        Command::FilterDemo(a) => execute("filter-demo", a, data::filter_demo),
        Command::Calibrate(a) => execute("calibrate", a, data::calibrate),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("efpmm: {e}");
            e.exit_code()
        }
    }
}
