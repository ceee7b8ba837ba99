use std::path::PathBuf;
use std::process::ExitCode;

use chemotaxis_core::analysis::expected_table;
use chemotaxis_core::scenario::{execute, load_config};
use chemotaxis_core::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chemotaxis", version, about = "Hyperbolic-parabolic chemotaxis solver and decay-rate checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write series.csv and report.json
    Run {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// also write sparse state snapshots
        #[arg(long)]
        snapshots: bool,
    },
    /// Validate a config and print it with defaults resolved
    CheckConfig { path: PathBuf },
    /// Print the expected decay-rate table
    ExpectedRates {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 2)]
        max_order: usize,
    },
}

fn config_error(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, output_dir, seed, snapshots } => {
            let mut cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => return config_error(e),
            };
            if let Some(d) = output_dir {
                cfg.output_dir = d;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            match execute(&cfg, snapshots) {
                Ok((summary, status)) => {
                    for check in &summary.checks {
                        println!("{}", check.line());
                    }
                    if let Some(report) = &summary.decay_report {
                        for e in report.entries.iter().filter(|e| !e.pass) {
                            println!("FAIL table {}: fitted {:.4}, expected {:.4}", e.quantity, e.fitted, e.expected);
                        }
                    }
                    if let Some(b) = &summary.diagnostics.blow_up {
                        eprintln!("{b}");
                    }
                    println!("report: {}", cfg.output_dir.join("report.json").display());
                    ExitCode::from(status.exit_code() as u8)
                }
                Err(e @ (Error::Config(_) | Error::InvalidParameter { .. } | Error::InvalidGrid(_))) => config_error(e),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::CheckConfig { path } => match load_config(&path) {
            Ok(cfg) => {
                println!("{}", serde_json::to_string_pretty(&cfg).expect("config serializes"));
                ExitCode::SUCCESS
            }
            Err(e) => config_error(e),
        },
        Command::ExpectedRates { dim, max_order } => {
            if !(1..=3).contains(&dim) {
                eprintln!("error: --dim must be 1, 2 or 3");
                return ExitCode::from(2);
            }
            let table = expected_table(dim, max_order);
            println!("quantity,norm,rate");
            for e in &table.entries {
                println!("{},{},{}", e.quantity, e.norm, e.rate);
            }
            ExitCode::SUCCESS
        }
    }
}
