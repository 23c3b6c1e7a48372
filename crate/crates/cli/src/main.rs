//! `pif`: run prediction-interval experiments from JSON configs.
//!
//! Exit codes: 0 on success, 1 when some method produced no results or a
//! validated report fails its coverage test, 2 on invalid input.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pif_core::evaluation::DEFAULT_ALPHA_TEST;
use pif_core::harness::{self, AggregateReport, ExperimentConfig, HarnessError, SweepConfig};

/// Environment variable holding the worker thread count.
const WORKERS_ENV: &str = "PIF_WORKERS";

#[derive(Parser)]
#[command(name = "pif", version, about = "Bootstrap and conformal prediction-interval experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run one experiment per MLP design point.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Test the pooled coverage of a saved aggregate.json against a nominal level.
    Validate {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        nominal: f64,
        #[arg(long, default_value_t = DEFAULT_ALPHA_TEST)]
        alpha_test: f64,
    },
}

fn configure_workers() -> Result<(), String> {
    let Ok(value) = std::env::var(WORKERS_ENV) else { return Ok(()) };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{WORKERS_ENV} must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn fail(e: &HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_invalid_input() { 2 } else { 1 })
}

fn report_missing(report: &AggregateReport) -> ExitCode {
    let missing = report.methods_without_results();
    for m in &missing {
        eprintln!("error: {m} produced no results");
    }
    if missing.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) }
}

fn run(config: PathBuf) -> ExitCode {
    let report = match ExperimentConfig::from_path(&config).and_then(harness::run_experiment) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    for m in &report.aggregate.methods {
        if let Some(s) = &m.summary {
            println!(
                "{:<32} coverage {:.4} (se {:.4})  width {:.4} (se {:.4})  trainings {}",
                m.method, s.coverage, s.se_coverage, s.mean_width, s.se_width, m.total_trainings
            );
        }
    }
    report_missing(&report.aggregate)
}

fn sweep(config: PathBuf) -> ExitCode {
    let report = match SweepConfig::from_path(&config).and_then(|c| harness::run_sweep(&c)) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let mut code = ExitCode::SUCCESS;
    for (design, rep) in &report.designs {
        println!("{}: {} methods", design.label, rep.aggregate.methods.len());
        if report_missing(&rep.aggregate) != ExitCode::SUCCESS {
            code = ExitCode::from(1);
        }
    }
    code
}

fn validate(report: PathBuf, nominal: f64, alpha_test: f64) -> ExitCode {
    let verdicts = match AggregateReport::from_path(&report)
        .and_then(|r| harness::validate_report(&r, nominal, alpha_test))
    {
        Ok(v) => v,
        Err(e) => return fail(&e),
    };
    let mut all_valid = true;
    for v in verdicts {
        match v.test {
            Some(t) => {
                println!(
                    "{:<32} {}/{}  CI [{:.4}, {:.4}]  {}",
                    v.method,
                    v.hits,
                    v.points,
                    t.ci_low,
                    t.ci_high,
                    if t.valid { "valid" } else { "INVALID" }
                );
                all_valid &= t.valid;
            }
            None => {
                println!("{:<32} no results", v.method);
                all_valid = false;
            }
        }
    }
    if all_valid { ExitCode::SUCCESS } else { ExitCode::from(1) }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_workers() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match cli.command {
        Command::Run { config } => run(config),
        Command::Sweep { config } => sweep(config),
        Command::Validate { report, nominal, alpha_test } => validate(report, nominal, alpha_test),
    }
}
