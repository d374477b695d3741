//! `vaspnet`: run, validate and inspect simulation scenarios.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use vaspnet_core::sim::{load_scenario, replay, run_scenario, Report, Scenario, World};

const EXIT_SCHEMA: u8 = 1;
const EXIT_BREACH: u8 = 2;

#[derive(Parser)]
#[command(name = "vaspnet", about = "Deterministic travel-rule network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Canonical,
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Overrides the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to quiescence and emit the report.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_enum, default_value = "text")]
        report: ReportFormat,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the event log, for `replay`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Check a scenario file against the schema.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Re-derive an event log's digest and compare it with the recorded one.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Run a scenario and print every network's installed routes.
    DumpRoutes {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Run a scenario and print the ledger, one transaction per line.
    DumpLedger {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

enum Failure {
    Schema(String),
    Breach(String),
}

fn load(args: &ScenarioArgs) -> Result<Scenario, Failure> {
    let mut scenario = load_scenario(&args.scenario).map_err(|e| Failure::Schema(e.to_string()))?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

fn simulate(args: &ScenarioArgs) -> Result<(World, Report), Failure> {
    run_scenario(load(args)?).map_err(|e| Failure::Schema(e.to_string()))
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| Failure::Schema(format!("{}: {e}", p.display()))),
        None => std::io::stdout().write_all(bytes).map_err(|e| Failure::Schema(e.to_string())),
    }
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { scenario, report: format, out, log } => {
            let (world, report) = simulate(&scenario)?;
            let bytes = match (format, &out) {
                (ReportFormat::Text, _) => report.to_text().into_bytes(),
                (ReportFormat::Canonical, Some(_)) => report.to_canonical(),
                (ReportFormat::Canonical, None) => format!("{}\n", hex::encode(report.to_canonical())).into_bytes(),
            };
            write_out(out.as_deref(), &bytes)?;
            if let Some(path) = log {
                write_out(Some(&path), world.log().to_text().as_bytes())?;
            }
            if report.has_breach() {
                return Err(Failure::Breach(format!("{} invariant breach(es)", report.breaches.len())));
            }
            Ok(())
        }
        Command::Validate { scenario } => {
            let s = load_scenario(&scenario).map_err(|e| Failure::Schema(e.to_string()))?;
            println!(
                "ok: {} networks, {} vasps, {} customers, {} script entries",
                s.networks.len(),
                s.vasps.len(),
                s.customers.len(),
                s.script.len()
            );
            Ok(())
        }
        Command::Replay { log } => {
            let text =
                fs::read_to_string(&log).map_err(|e| Failure::Schema(format!("{}: {e}", log.display())))?;
            match replay(&text) {
                Ok(summary) => {
                    println!("ok: {} events to tick {}, digest {}", summary.events, summary.last_tick, summary.digest.to_hex());
                    Ok(())
                }
                Err(e @ vaspnet_core::sim::ReplayError::DigestMismatch { .. }) => Err(Failure::Breach(e.to_string())),
                Err(e) => Err(Failure::Schema(e.to_string())),
            }
        }
        Command::DumpRoutes { scenario } => {
            let (world, _) = simulate(&scenario)?;
            for (id, network) in world.networks() {
                println!("[{id}]");
                for line in network.routes().dump_lines() {
                    println!("{line}");
                }
            }
            Ok(())
        }
        Command::DumpLedger { scenario } => {
            let (world, _) = simulate(&scenario)?;
            for line in world.ledger().export_lines() {
                println!("{line}");
            }
            println!("verify_chain {}", world.ledger().verify_chain());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Schema(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_SCHEMA)
        }
        Err(Failure::Breach(msg)) => {
            eprintln!("breach: {msg}");
            ExitCode::from(EXIT_BREACH)
        }
    }
}
