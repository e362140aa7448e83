//! `msexit`: run a homogenization, fluctuation or exit-law experiment from a
//! JSON configuration and write `model.json`, `report.json` and
//! `samples.csv`.
//!
//! Exit codes: 0 every check passed, 2 configuration error, 3 solver
//! failure, 4 invariant violation, 5 statistical tolerance missed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msexit::harness::{run_ensemble, Check, CheckCategory, EnsembleReport, ExperimentConfig};
use msexit::Error;

/// Environment variable overriding the master seed of the configuration.
const SEED_ENV: &str = "MSEXIT_SEED";

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_INVARIANT: u8 = 4;
const EXIT_STATISTICAL: u8 = 5;

#[derive(Debug, Parser)]
#[command(
    name = "msexit",
    version,
    about = "Homogenization and exit-law experiments for multiscale diffusions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Subcommand)]
enum Command {
    /// Solve the cell problems and tabulate the averaged coefficients.
    Homogenize(Args),
    /// Compare simulated fluctuations with the limiting Gaussian process.
    Fluctuations(Args),
    /// Compare simulated exit times with the projected limit law.
    ExitLaw(Args),
    /// Conditional exit-time law of the rough-potential Langevin dynamics.
    RoughPotential(Args),
    /// Distance of the rough scale function from its ripple-free limit.
    ScaleSpeed(Args),
}

#[derive(Debug, Clone, PartialEq, Eq, clap::Args)]
struct Args {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the configuration's `output_dir`, then
    /// the current directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; takes precedence over MSEXIT_SEED and the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the report summary on stdout.
    #[arg(long)]
    quiet: bool,
}

impl Command {
    fn args(&self) -> &Args {
        match self {
            Command::Homogenize(a)
            | Command::Fluctuations(a)
            | Command::ExitLaw(a)
            | Command::RoughPotential(a)
            | Command::ScaleSpeed(a) => a,
        }
    }

    /// The configuration `kind` this subcommand runs.
    fn kind(&self) -> &'static str {
        match self {
            Command::Homogenize(_) => "homogenize",
            Command::Fluctuations(_) => "fluctuation",
            Command::ExitLaw(_) => "exit",
            Command::RoughPotential(_) => "conditional_exit",
            Command::ScaleSpeed(_) => "scale_speed",
        }
    }
}

/// Exit code of an error raised while running an experiment.
fn error_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_)
        | Error::Json(_)
        | Error::Io(_)
        | Error::InvalidField(_)
        | Error::Domain(_)
        | Error::Precondition(_)
        | Error::UnsupportedRegime(_)
        | Error::Budget { .. } => EXIT_CONFIG,
        Error::Unsolvable { .. } => EXIT_INVARIANT,
        _ => EXIT_SOLVER,
    }
}

/// Exit code of a finished report: invariants outrank statistics.
fn report_code(report: &EnsembleReport) -> u8 {
    let failed = |cat| {
        report
            .all_checks()
            .any(|c: &Check| c.category == cat && !c.pass)
    };
    if failed(CheckCategory::Invariant) {
        EXIT_INVARIANT
    } else if failed(CheckCategory::Statistical) {
        EXIT_STATISTICAL
    } else {
        0
    }
}

/// Report of a run that stopped with an error, so that the failing residual
/// is still on disk.
fn error_report(config: &ExperimentConfig, e: &Error) -> EnsembleReport {
    let mut checks = Vec::new();
    if let Error::Unsolvable {
        residual,
        tolerance,
    } = e.root()
    {
        checks.push(Check::at_most(
            "centering residual",
            CheckCategory::Invariant,
            *residual,
            *tolerance,
        ));
    }
    EnsembleReport {
        kind: config.experiment.kind().to_string(),
        config_hash: config.hash(),
        master_seed: config.master_seed,
        criteria: None,
        blocks: vec![],
        checks,
        values: vec![],
        notes: vec![format!("error: {e}")],
        table: None,
        wall_time_seconds: 0.0,
        model: None,
    }
}

fn write_outputs(dir: &Path, report: &EnsembleReport) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    if let Some(model) = &report.model {
        fs::write(
            dir.join("model.json"),
            serde_json::to_string_pretty(model)? + "\n",
        )?;
    }
    fs::write(dir.join("report.json"), report.to_json() + "\n")?;
    fs::write(dir.join("samples.csv"), report.samples_csv())?;
    Ok(())
}

fn load_config(command: &Command) -> Result<ExperimentConfig, Error> {
    let args = command.args();
    let text = fs::read_to_string(&args.config)?;
    let mut config = ExperimentConfig::from_json(&text)?;
    if config.experiment.kind() != command.kind() {
        return Err(Error::Config(format!(
            "configuration of kind '{}' given to a '{}' run",
            config.experiment.kind(),
            command.kind()
        )));
    }
    if let Ok(s) = std::env::var(SEED_ENV) {
        config.master_seed = s.trim().parse().map_err(|_| {
            Error::Config(format!("{SEED_ENV} must be an unsigned integer, got '{s}'"))
        })?;
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    Ok(config)
}

fn print_report(report: &EnsembleReport) {
    for (name, value) in &report.values {
        println!("{name} = {value}");
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    for line in report.check_lines() {
        println!("{line}");
    }
}

fn run(command: &Command) -> u8 {
    let args = command.args();
    let config = match load_config(command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("msexit: {e}");
            return EXIT_CONFIG;
        }
    };
    let out = args
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let (report, code) = match run_ensemble(&config) {
        Ok(r) => {
            let code = report_code(&r);
            (r, code)
        }
        Err(e) => {
            eprintln!("msexit: {e}");
            (error_report(&config, &e), error_code(&e))
        }
    };
    if let Err(e) = write_outputs(&out, &report) {
        eprintln!("msexit: cannot write to {}: {e}", out.display());
        return EXIT_CONFIG;
    }
    if !args.quiet {
        print_report(&report);
    }
    code
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(run(&cli.command))
}
