// SPDX-License-Identifier: Apache-2.0

//! `opera`: validate, prioritize, run and score operator-level test campaigns.

mod commands;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use opera_core::prioritization::StrategyKind;

#[derive(Parser)]
#[command(name = "opera", version, about = "Operator-level test migration and prioritization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a corpus trace and print per-operator counts.
    Validate(ValidateArgs),
    /// Order a corpus with one strategy and write the plan.
    Prioritize(PrioritizeArgs),
    /// Execute a plan through an external executor and record verdicts.
    Run(RunArgs),
    /// Summarize a run log: verdicts, unique bugs, timing and APFD.
    Report(ReportArgs),
    /// Generate a simulated corpus with seeded bugs.
    Simulate(SimulateArgs),
    /// Score strategies over simulated corpora for a range of seeds.
    CompareStrategies(CompareArgs),
    /// Executor backed by a simulated corpus, for use with `run`.
    SimExec(SimExecArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// Corpus trace (JSON lines).
    corpus: PathBuf,
    /// Equipped test suite trace.
    #[arg(long)]
    equipped: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Opera,
    Random,
    Total,
    Additional,
    Fast,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Opera => StrategyKind::Opera,
            StrategyArg::Random => StrategyKind::Random,
            StrategyArg::Total => StrategyKind::Total,
            StrategyArg::Additional => StrategyKind::Additional,
            StrategyArg::Fast => StrategyKind::Fast,
        }
    }
}

#[derive(Args, Clone, Copy)]
struct FastArgs {
    /// Shingle length for the fast strategy.
    #[arg(long, default_value_t = 5)]
    fast_k: usize,
    /// MinHash functions for the fast strategy.
    #[arg(long, default_value_t = 128)]
    fast_hashes: usize,
    /// LSH bands for the fast strategy; must divide the hash count.
    #[arg(long, default_value_t = 32)]
    fast_bands: usize,
}

#[derive(Args)]
struct PrioritizeArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    equipped: Option<PathBuf>,
    /// Coverage matrix (JSON lines); required by total and additional.
    #[arg(long)]
    coverage: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    fast: FastArgs,
    /// Plan output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    /// Measured wall time.
    Wall,
    /// Sum of the times executors report.
    Reported,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    /// Command template with `{model}` and `{result}` placeholders.
    #[arg(long)]
    executor: String,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    budget: Option<f64>,
    /// Stop after this many tests.
    #[arg(long)]
    max_tests: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Per-test timeout in seconds.
    #[arg(long, default_value_t = 600.0)]
    timeout: f64,
    /// Environment variables passed to the executor besides PATH.
    #[arg(long = "env")]
    env_passthrough: Vec<String>,
    /// JSON object mapping operator signatures to conversion functions.
    #[arg(long)]
    conv_map: Option<PathBuf>,
    /// Chebyshev distance above which outputs are inconsistent.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long, value_enum, default_value = "wall")]
    clock: ClockArg,
    /// Directory for model programs and executor results.
    #[arg(long, default_value = "opera-work")]
    work_dir: PathBuf,
    /// Run log (JSON lines).
    #[arg(long, default_value = "run.jsonl")]
    log: PathBuf,
    /// Continue an interrupted log instead of starting over.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run log (JSON lines).
    log: PathBuf,
    #[arg(long)]
    conv_map: Option<PathBuf>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Known bug matrix, for time to all bugs.
    #[arg(long)]
    bugs: Option<PathBuf>,
    /// Full plan, for APFD against the bug matrix.
    #[arg(long, requires = "bugs")]
    plan: Option<PathBuf>,
    /// Write the unique-bug timeline as CSV.
    #[arg(long)]
    timeline: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulator spec (JSON); the built-in default when absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Use a randomly drawn spec for this seed instead.
    #[arg(long, conflicts_with = "spec")]
    random_spec: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Number of seeds, run as 0..N.
    #[arg(long)]
    seeds: u64,
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Strategies to compare; all when absent.
    #[arg(long, value_enum, value_delimiter = ',')]
    strategies: Vec<StrategyArg>,
    #[command(flatten)]
    fast: FastArgs,
    /// Write comparison.csv and summary.json here; CSV to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimExecArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    sim_dir: PathBuf,
    /// Model program to judge.
    model: PathBuf,
    /// Where to write the execution record.
    result: PathBuf,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad input or configuration.
    Config(String),
    /// The campaign could not run as planned.
    Infra(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Infra(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Infra(m) => f.write_str(m),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Validate(a) => commands::validate(a),
        Command::Prioritize(a) => commands::prioritize(a),
        Command::Run(a) => commands::run(a),
        Command::Report(a) => commands::report(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::CompareStrategies(a) => commands::compare(a),
        Command::SimExec(a) => commands::sim_exec(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("opera: {e}");
            ExitCode::from(e.code())
        }
    }
}
