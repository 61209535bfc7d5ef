//! `complab`: market completeness analysis runs from JSON configurations.
//!
//! ```text
//! complab <subcommand> --config <file> --out <dir> [--seed N] [--strict]
//!         [--dump-paths <file>] [--sweep-steps a,b,c]
//! ```
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical/runtime
//! failure, 4 verdict INCONCLUSIVE under `--strict`. Errors are also
//! emitted as JSON on standard error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use complab_core::report::{run, RunOptions, Subcommand as Pipeline};

#[derive(Parser)]
#[command(
    name = "complab",
    version,
    about = "Decides whether a factor-diffusion market augmented with traded options is complete"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Analysis configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json, results.json and CSV tables.
    #[arg(long)]
    out: PathBuf,
    /// Seed override (required here if the config omits run.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Exit with code 4 when the verdict is INCONCLUSIVE.
    #[arg(long)]
    strict: bool,
    /// Also dump simulated paths as CSV (simulate subcommand).
    #[arg(long, value_name = "FILE")]
    dump_paths: Option<PathBuf>,
    /// Rebalance-count sweep for hedge runs, e.g. 25,50,100,200.
    #[arg(long, value_delimiter = ',', value_name = "A,B,C")]
    sweep_steps: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Probe the diffusion matrix for strict positive definiteness.
    Validate(RunArgs),
    /// Simulate factor paths and report terminal statistics.
    Simulate(RunArgs),
    /// Price the configured assets at the initial point.
    Price(RunArgs),
    /// Pathwise occupation and single-point completeness verdicts.
    Completeness(RunArgs),
    /// Construct the orthogonal claim witnessing incompleteness.
    Witness(RunArgs),
    /// Replication backtest of a claim with the traded assets.
    Hedge(RunArgs),
    /// Variance-swap value, pathwise checks and rank equivalence.
    Varswap(RunArgs),
}

fn main() {
    if let Ok(threads) = std::env::var("COMPLAB_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            if n >= 1 {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .ok();
            }
        }
    }

    let cli = Cli::parse();
    let (pipeline, args) = match &cli.command {
        Command::Validate(a) => (Pipeline::Validate, a),
        Command::Simulate(a) => (Pipeline::Simulate, a),
        Command::Price(a) => (Pipeline::Price, a),
        Command::Completeness(a) => (Pipeline::Completeness, a),
        Command::Witness(a) => (Pipeline::Witness, a),
        Command::Hedge(a) => (Pipeline::Hedge, a),
        Command::Varswap(a) => (Pipeline::Varswap, a),
    };
    let opts = RunOptions {
        seed: args.seed,
        strict: args.strict,
        dump_paths: args.dump_paths.clone(),
        sweep_steps: args.sweep_steps.clone(),
    };
    let code = run(pipeline, &args.config, &args.out, &opts);
    std::process::exit(code);
}
