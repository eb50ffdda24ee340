use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fermi1d_cli::verify::{self, Scenario};
use fermi1d_cli::{CliError, Output, RunConfig};

/// Exact one-dimensional density functional theory at desk scale.
#[derive(Parser)]
#[command(name = "fermi1d", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON result path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Nodal CSV table path.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Forward many-body ground state.
    Solve(Io),
    /// Potential whose ground state has the target density.
    Invert(Io),
    /// Levy–Lieb, Kohn–Sham kinetic, Hartree and xc functionals at the target.
    Fll(Io),
    /// Exact-xc Kohn–Sham self-consistency.
    KsScf(Io),
    /// Built-in verification scenario.
    Verify {
        /// One of prop-2.4, prop-2.7, monotonicity, degeneracy, hk-neumann,
        /// hk-periodic, rearrangement, necessity, k-operator.
        scenario: String,
        #[command(flatten)]
        io: Io,
    },
    /// Slater determinant with the target density.
    DensityToSlater(Io),
}

fn load(path: Option<&Path>, required: bool) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            RunConfig::parse(&text).map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                e => e,
            })
        }
        None if required => Err(CliError::Config("--config is required".into())),
        None => Ok(RunConfig::default()),
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("FERMI1D_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("FERMI1D_THREADS = `{raw}` is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn emit(out: &Output, io: &Io) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&out.json).expect("JSON values serialize") + "\n";
    match &io.out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    if let (Some(path), Some(csv)) = (&io.csv, &out.csv) {
        std::fs::write(path, csv)?;
    }
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, CliError> {
    configure_threads()?;
    let (out, io) = match cli.command {
        Command::Solve(io) => (fermi1d_cli::cmd_solve(&load(io.config.as_deref(), true)?)?, io),
        Command::Invert(io) => (fermi1d_cli::cmd_invert(&load(io.config.as_deref(), true)?)?, io),
        Command::Fll(io) => (fermi1d_cli::cmd_fll(&load(io.config.as_deref(), true)?)?, io),
        Command::KsScf(io) => (fermi1d_cli::cmd_ks_scf(&load(io.config.as_deref(), true)?)?, io),
        Command::DensityToSlater(io) => (fermi1d_cli::cmd_density_to_slater(&load(io.config.as_deref(), true)?)?, io),
        Command::Verify { scenario, io } => {
            let scenario: Scenario = scenario.parse()?;
            let report = verify::run(scenario, &load(io.config.as_deref(), false)?)?;
            for c in &report.checks {
                eprintln!(
                    "{} {}: measured {:.6e}, tolerance {:.6e}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.name,
                    c.measured,
                    c.tolerance
                );
            }
            let out = Output {
                json: serde_json::to_value(&report).expect("report serializes"),
                csv: None,
                warnings: Vec::new(),
                success: report.pass,
            };
            (out, io)
        }
    };
    emit(&out, &io)?;
    Ok(out.success)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
