//! `oricf`: validate, run and inspect pipelines, serve models to other
//! machines, and turn utilization traces into energy reports.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oricf_core::spec::PlacementTarget;

/// Nonzero exit statuses. The numeric values are part of the interface;
/// success is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Invalid = 1,
    Runtime = 2,
    Usage = 3,
}

/// A failed command: what to print on standard error and how to exit.
#[derive(Debug)]
pub struct Failure {
    pub status: Status,
    pub message: String,
}

impl Failure {
    pub fn new(status: Status, message: impl Into<String>) -> Failure {
        Failure {
            status,
            message: message.into(),
        }
    }
}

pub type CmdResult = Result<(), Failure>;

#[derive(Parser, Debug)]
#[command(name = "oricf", version, about = "Declarative multimodal inference pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a pipeline file and print diagnostics.
    Validate { spec: PathBuf },
    /// Run a pipeline and print its run report as JSON.
    Run(RunArgs),
    /// Serve models to remote pipelines.
    Worker {
        #[arg(long, default_value = "0.0.0.0:7070")]
        listen: String,
    },
    /// Estimate power and energy savings from two utilization traces.
    Report(ReportArgs),
    /// Print the pipeline graph in DOT format.
    Graph { spec: PathBuf },
}

#[derive(Args, Debug)]
struct RunArgs {
    spec: PathBuf,
    /// Stop after this many seconds.
    #[arg(long, value_parser = parse_seconds)]
    duration: Option<std::time::Duration>,
    /// Sample host CPU utilization during the run into this CSV file.
    #[arg(long)]
    telemetry: Option<PathBuf>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    sample_interval_ms: u64,
    /// Override a node's placement: `node=onboard` or `node=edge://host:port`.
    #[arg(long = "placement", value_parser = parse_placement)]
    placements: Vec<(String, PlacementTarget)>,
    /// Include wall time in the report.
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BasisArg {
    Median,
    Mean,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    onboard: PathBuf,
    #[arg(long)]
    offload: PathBuf,
    #[arg(long)]
    p_idle: f64,
    #[arg(long)]
    p_full: f64,
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Which central value of each trace drives the power model.
    #[arg(long, value_enum, default_value = "median")]
    basis: BasisArg,
}

fn parse_seconds(s: &str) -> Result<std::time::Duration, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number of seconds"))?;
    std::time::Duration::try_from_secs_f64(v).map_err(|_| format!("{s:?} is not a valid duration"))
}

fn parse_placement(s: &str) -> Result<(String, PlacementTarget), String> {
    let (node, target) = s
        .split_once('=')
        .ok_or_else(|| format!("{s:?} must look like node=target"))?;
    if node.is_empty() {
        return Err(format!("{s:?} has an empty node name"));
    }
    Ok((node.to_string(), target.parse()?))
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ORICF_LOG", "info"))
        .format_timestamp_millis()
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(Status::Usage as u8),
            };
        }
    };
    init_logging();
    let result = match cli.command {
        Command::Validate { spec } => commands::validate(&spec),
        Command::Run(a) => commands::run(commands::RunRequest {
            spec: a.spec,
            duration: a.duration,
            telemetry: a.telemetry,
            sample_interval: std::time::Duration::from_millis(a.sample_interval_ms),
            placements: a.placements,
            timing: a.timing,
        }),
        Command::Worker { listen } => commands::worker(&listen),
        Command::Report(a) => commands::report(commands::ReportRequest {
            onboard: a.onboard,
            offload: a.offload,
            p_idle: a.p_idle,
            p_full: a.p_full,
            json: a.format == Format::Json,
            basis: match a.basis {
                BasisArg::Median => oricf_core::telemetry::Basis::Median,
                BasisArg::Mean => oricf_core::telemetry::Basis::Mean,
            },
        }),
        Command::Graph { spec } => commands::graph(&spec),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("oricf: {}", f.message);
            }
            ExitCode::from(f.status as u8)
        }
    }
}
