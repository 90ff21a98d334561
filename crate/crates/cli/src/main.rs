//! `mlmcbo`: experiment harness for multilevel Monte Carlo Bayesian
//! optimization. Each subcommand reproduces one study as a CSV plus a JSON
//! sidecar of config and summary statistics.

mod config;
mod experiments;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde_json::json;

use config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Experiment {
    /// Maximizer convergence rate in the outer sample count.
    OuterRate,
    /// Maximizer convergence rate in the inner sample count.
    InnerRate,
    /// Per-level increment second moments for both couplings.
    IncrementRate,
    /// MSE-versus-cost curves for nested MC and MLMC.
    Complexity,
    /// Full BO loop comparison (NMSE / GAP).
    FullBo,
    /// Multilevel value function against the multilevel maximizer.
    ValueFunctionCompare,
    /// Print the level schedule for a target accuracy.
    Allocate,
    /// Write the benchmark manifest (name, dim, box, known optimum).
    Benchmarks,
}

#[derive(Parser)]
#[command(
    name = "mlmcbo",
    version,
    about = "MLMC look-ahead Bayesian optimization experiments"
)]
struct Cli {
    /// Experiment to run.
    #[arg(value_enum)]
    experiment: Experiment,
    /// JSON config file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config replication count.
    #[arg(long)]
    reps: Option<usize>,
    /// Output CSV path (a JSON sidecar is written next to it).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err = json!({"error": e.to_string()});
            eprintln!("{}", serde_json::to_string(&err).unwrap());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = cli.reps {
        cfg.replications = reps;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    cfg.validate()?;

    if cli.experiment == Experiment::Benchmarks {
        let out = cfg
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("benchmarks.manifest"));
        std::fs::write(&out, mlmcbo_core::bench::manifest())?;
        println!("wrote {}", out.display());
        return Ok(());
    }

    let (table, summary) = match cli.experiment {
        Experiment::OuterRate => experiments::rates::run_outer_rate(&cfg)?,
        Experiment::InnerRate => experiments::rates::run_inner_rate(&cfg)?,
        Experiment::IncrementRate => experiments::rates::run_increment_rate(&cfg)?,
        Experiment::Complexity => experiments::complexity::run_complexity(&cfg)?,
        Experiment::FullBo => experiments::full_bo::run_full_bo(&cfg)?,
        Experiment::ValueFunctionCompare => {
            experiments::value_compare::run_value_function_compare(&cfg)?
        }
        Experiment::Allocate => experiments::allocate::run_allocate(&cfg)?,
        Experiment::Benchmarks => unreachable!(),
    };

    let out = cfg.out.clone().unwrap_or_else(|| {
        let name = format!("{:?}", cli.experiment).to_lowercase();
        PathBuf::from(format!("{name}.csv"))
    });
    output::write_outputs(&out, &table, serde_json::to_value(&cfg)?, summary.clone())?;
    println!(
        "wrote {} and {}",
        out.display(),
        output::sidecar_path(&out).display()
    );
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}
