use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use opinion_weights::cli::{self, acceptance};

#[derive(Parser)]
#[command(
    version,
    about = "Steer the weighted barycenter of an opinion dynamics system"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trajectory.csv, controls.csv, summary.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several strategies from the same initial data.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated list, e.g. linf_um,l1_um,linf_free,l1_free
        #[arg(long)]
        strategies: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the acceptance suite and write acceptance.csv.
    Acceptance {
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    match Args::parse().command {
        Command::Run { config, out } => {
            let cfg = cli::load_config(&config)?;
            let summary = cli::run(&cfg, &out)
                .with_context(|| format!("strategy {}", cfg.strategy.name()))?;
            println!(
                "{}: final distance {:?}, time to threshold {}",
                summary.strategy,
                summary.final_dist,
                summary
                    .time_to_threshold
                    .map_or("never".to_string(), |t| format!("{t:?}"))
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare {
            config,
            strategies,
            out,
        } => {
            let cfg = cli::load_config(&config)?;
            let list = cli::parse_strategies(&strategies).map_err(|e| anyhow!(e))?;
            if list.is_empty() {
                return Err(anyhow!("no strategies given"));
            }
            let rows = cli::compare(&cfg, &list, &out)?;
            let mut failed = false;
            for row in &rows {
                match &row.outcome {
                    Ok(s) => println!(
                        "{:<10} time_to_threshold={} final_dist={:?} mass=[{:?}, {:?}]",
                        s.strategy,
                        s.time_to_threshold
                            .map_or("never".to_string(), |t| format!("{t:?}")),
                        s.final_dist,
                        s.min_total_mass,
                        s.max_total_mass
                    ),
                    Err(e) => {
                        failed = true;
                        println!("{:<10} failed: {e}", row.strategy.name());
                    }
                }
            }
            Ok(if failed {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Acceptance { out } => {
            let report = acceptance::run_to(&out)?;
            for row in &report {
                println!("{row}");
            }
            Ok(if report.iter().all(|r| r.pass) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
