//! `lab`: config-driven runner for the reaction-diffusion laboratory.
//!
//! ```text
//! lab run <config.toml> [--threads N] [--verify] [--out DIR]
//! lab list
//! lab schema <experiment>
//! ```
//!
//! The environment variable `LAB_SEED` overrides the config seed.

use clap::{Parser, Subcommand};
use spde_lab::ensemble::configure_threads;
use spde_lab::experiments::config::ExperimentKind;
use spde_lab::experiments::{run_file, schema_text};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lab", version, about = "stochastic reaction-diffusion laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config file.
    Run {
        /// Path to the config file.
        config: PathBuf,
        /// Worker threads (0 = all cores). Results never depend on this.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Re-run the experiment and fail on any nondeterminism.
        #[arg(long)]
        verify: bool,
        /// Output directory for CSV artifacts and the manifest.
        #[arg(long, default_value = "lab-out")]
        out: PathBuf,
    },
    /// List the experiment catalog.
    List,
    /// Print the CSV schema of one experiment.
    Schema {
        /// Experiment name, as in `lab list`.
        experiment: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, threads, verify, out } => {
            configure_threads(threads);
            match run_file(&config, &out, verify) {
                Ok(manifest) => {
                    println!(
                        "experiment {} (seed {}) -> {}",
                        manifest.experiment,
                        manifest.seed,
                        out.display()
                    );
                    for a in &manifest.artifacts {
                        println!("  artifact {} ({} rows, sha256 {})", a.name, a.rows, &a.sha256[..12]);
                    }
                    let mut all_pass = true;
                    for v in &manifest.verdicts {
                        let tag = if v.pass { "pass" } else { "FAIL" };
                        println!("  [{tag}] {}: {}", v.check, v.detail);
                        all_pass &= v.pass;
                    }
                    println!("  wall clock: {:.2} s", manifest.wall_clock_secs);
                    if all_pass {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(2)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::List => {
            for kind in ExperimentKind::all() {
                println!("{:<22} {}", kind.name(), kind.describe());
            }
            ExitCode::SUCCESS
        }
        Command::Schema { experiment } => match ExperimentKind::parse(&experiment) {
            Ok(kind) => {
                print!("{}", schema_text(kind));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
