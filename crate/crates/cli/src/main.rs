use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use pibsde::{run, Overrides, Scenario, Subcommand};

#[derive(Parser)]
#[command(version, about = "BSDE solver and local risk-minimizing hedger under delayed information")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Simulate the market and check its martingale structure
    Simulate(RunArgs),
    /// Solve the backward equation declared in the scenario
    Solve(RunArgs),
    /// Galtchouk-Kunita-Watanabe and Föllmer-Schweizer decompositions
    Decompose(RunArgs),
    /// Locally risk-minimizing strategy and its diagnostics
    Hedge(RunArgs),
    /// Minimal martingale measure density and prices
    Mmm(RunArgs),
    /// Full invariant battery across all modules
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML)
    scenario: PathBuf,
    /// Override market.n_paths
    #[arg(long)]
    paths: Option<usize>,
    /// Override market.n_steps
    #[arg(long)]
    steps: Option<usize>,
    /// Override run.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override run.output_dir
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Command {
    fn split(self) -> (Subcommand, RunArgs) {
        match self {
            Command::Simulate(a) => (Subcommand::Simulate, a),
            Command::Solve(a) => (Subcommand::Solve, a),
            Command::Decompose(a) => (Subcommand::Decompose, a),
            Command::Hedge(a) => (Subcommand::Hedge, a),
            Command::Mmm(a) => (Subcommand::Mmm, a),
            Command::Validate(a) => (Subcommand::Validate, a),
        }
    }
}

fn main() -> ExitCode {
    let (sub, args) = Cli::parse().command.split();
    let overrides = Overrides { paths: args.paths, steps: args.steps, seed: args.seed };
    let scenario = match Scenario::load(&args.scenario).and_then(|s| s.with_overrides(overrides)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out = args.output.unwrap_or_else(|| scenario.run.output_dir.clone());
    let report = match run(&scenario, sub, Some(&out)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    for c in &report.checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("{status} {:<48} {:>14.6e} (threshold {:.6e}) {}", c.name, c.statistic, c.threshold, c.detail);
    }
    for (name, v) in &report.metrics {
        println!("metric {name} = {v}");
    }
    let failed = report.failed().len();
    println!(
        "{sub}: {} checks, {failed} failed; report {}",
        report.checks.len(),
        out.join(report.report_file_name()).display()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
