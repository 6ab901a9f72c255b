use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use auxcbf::config::{compare, execute, ConfigError, Overrides, RunConfig, RunError, Scenario};
use auxcbf::report::{emit_trace, ComparisonReport, RunReport};
use auxcbf::sim::{InfeasibilityPolicy, SimError, SimTrace, Termination};
use clap::{Parser, Subcommand, ValueEnum};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_BREACH: u8 = 4;

/// Batch simulator for CBF-CLF-QP controllers with an auxiliary
/// feasibility constraint.
///
/// Runs are deterministic; the CBF_SAFE_SEED environment variable is
/// reserved and currently ignored.
#[derive(Debug, Parser)]
#[command(name = "auxcbf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one scenario and write its trace and summary.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Sacc,
    Acc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Abort,
    DropControlBounds,
    ClampToBounds,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    /// Platoon parameter preset.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    case: Option<u8>,
    #[arg(long, value_enum)]
    feasibility: Option<Switch>,
    /// What to do when a QP is infeasible.
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Control interval in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Horizon in seconds.
    #[arg(long)]
    t_end: Option<f64>,
    /// CSV trace path. With --compare, `-on`/`-off` is appended to the stem.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON summary path; stdout when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run with and without the feasibility constraint.
    #[arg(long)]
    compare: bool,
    /// Write the effective configuration to this path.
    #[arg(long)]
    emit_config: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            scenario: self.scenario.map(|s| match s {
                ScenarioArg::Sacc => Scenario::Sacc,
                ScenarioArg::Acc => Scenario::Acc,
            }),
            case: self.case,
            feasibility: self.feasibility.map(|f| matches!(f, Switch::On)),
            policy: self.policy.map(|p| match p {
                PolicyArg::Abort => InfeasibilityPolicy::Abort,
                PolicyArg::DropControlBounds => InfeasibilityPolicy::DropControlBounds,
                PolicyArg::ClampToBounds => InfeasibilityPolicy::ClampToBounds,
            }),
            dt: self.dt,
            t_end: self.t_end,
        }
    }
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.to_string(),
        }
    }

    fn runtime(message: impl ToString) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.to_string(),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(_)
            | RunError::Sim(SimError::Config(_) | SimError::Precondition(_)) => Self::config(e),
            RunError::Sim(_) => Self::runtime(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Command::Run(args) = cli.command;
    match run(&args) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(args: &RunArgs) -> Result<u8, Failure> {
    let text =
        match &args.config {
            Some(path) => Some(fs::read_to_string(path).map_err(|e| {
                Failure::config(format!("cannot read config {}: {e}", path.display()))
            })?),
            None => None,
        };
    let config = RunConfig::load(text.as_deref(), &args.overrides()).map_err(|e| match e {
        ConfigError::Parse(_) | ConfigError::Invalid(_) => Failure::config(e),
    })?;
    if let Some(path) = &args.emit_config {
        write_file(path, config.to_toml().as_bytes())?;
    }

    let scenario = config.run.scenario.as_str();
    let case = config.run.case;
    let (document, reports) = if args.compare {
        let (on, off) = compare(&config);
        let (on, off) = (on?, off?);
        if let Some(out) = &args.out {
            write_trace(&suffixed(out, "on"), &on)?;
            write_trace(&suffixed(out, "off"), &off)?;
        }
        let report = ComparisonReport {
            with_feasibility: RunReport::new(scenario, case, &on),
            without_feasibility: RunReport::new(scenario, case, &off),
        };
        let json = serde_json::to_string_pretty(&report).map_err(Failure::runtime)?;
        (
            json,
            vec![
                (report.with_feasibility, on),
                (report.without_feasibility, off),
            ],
        )
    } else {
        let trace = execute(&config)?;
        if let Some(out) = &args.out {
            write_trace(out, &trace)?;
        }
        let report = RunReport::new(scenario, case, &trace);
        let json = serde_json::to_string_pretty(&report).map_err(Failure::runtime)?;
        (json, vec![(report, trace)])
    };

    match &args.summary {
        Some(path) => write_file(path, format!("{document}\n").as_bytes())?,
        None => println!("{document}"),
    }

    let mut code = 0;
    for (report, trace) in &reports {
        if let Termination::IntegrationFailure { t, message } = &trace.termination {
            eprintln!("error: integration failed at t = {t}: {message}");
            code = code.max(EXIT_RUNTIME);
        }
        if report.guarantee_breached() {
            eprintln!("error: safety guarantee breached in a run with the feasibility constraint");
            code = code.max(EXIT_BREACH);
        }
    }
    Ok(code)
}

fn suffixed(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}-{tag}.{ext}"),
        None => format!("{stem}-{tag}"),
    };
    path.with_file_name(name)
}

fn write_trace(path: &Path, trace: &SimTrace) -> Result<(), Failure> {
    let file = File::create(path)
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
    emit_trace(trace, BufWriter::new(file))
        .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e: io::Error| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}
