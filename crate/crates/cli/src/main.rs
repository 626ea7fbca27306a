use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use unlearn_core::harness::{self, Scenario, ScenarioConfig, DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV};

/// Reproducible experiments on descent-ascent unlearning.
#[derive(Debug, Parser)]
#[command(name = "unlearn-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write its CSV tables and JSON report.
    Run {
        scenario: Scenario,
        /// JSON file with `seed` and `params`.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = OUTPUT_DIR_ENV, default_value = DEFAULT_OUTPUT_DIR)]
        out: PathBuf,
    },
    /// Run a scenario's checks and exit nonzero if any fails.
    Verify {
        scenario: Scenario,
        /// Defaults to the built-in parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the available scenarios.
    List,
}

fn load(config: Option<&PathBuf>, seed: Option<u64>) -> Result<ScenarioConfig> {
    let cfg = match config {
        Some(path) => {
            ScenarioConfig::load(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => ScenarioConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

/// Counts print as integers, everything else in short scientific form.
fn number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.0}")
    } else {
        format!("{v:.6e}")
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::List => {
            for s in Scenario::ALL {
                println!("{:<16} {}", s.name(), s.describe());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            scenario,
            config,
            seed,
            out,
        } => {
            let cfg = load(Some(&config), seed)?;
            let report = harness::run(scenario, &cfg)?;
            let dir = report.write(&out)?;
            let failed = report.failures().count();
            println!(
                "{scenario}: {} checks, {failed} failed; wrote {}",
                report.assertions.len(),
                dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            scenario,
            config,
            seed,
        } => {
            let cfg = load(config.as_ref(), seed)?;
            let report = harness::run(scenario, &cfg)?;
            for a in &report.assertions {
                println!(
                    "{} {} measured={} bound={}",
                    if a.passed { "PASS" } else { "FAIL" },
                    a.claim_id,
                    number(a.measured),
                    number(a.bound)
                );
            }
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
