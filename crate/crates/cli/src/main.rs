//! `dvccosc`: analyze, design, simulate and sweep DVCC quadrature oscillators.
//!
//! Every command prints one JSON run report on stdout. Exit status is 0 on
//! success, 1 for usage and input errors, 2 when analysis or simulation fails.

mod commands;
mod report;

use std::ffi::OsString;
use std::io::{ErrorKind, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dvccosc::netlist::parse_value;

/// Environment variable naming the directory for files written without an
/// explicit path.
pub const OUT_DIR_ENV: &str = "DVCCOSC_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "dvccosc", version, about = "Single-DVCC quadrature oscillator toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Characteristic polynomial, frequency and condition of oscillation.
    Analyze(AnalyzeArgs),
    /// Equal-amplitude design for a target frequency; writes the netlist.
    Design(DesignArgs),
    /// RK4 transient run with waveform CSV and quadrature measurement.
    Simulate(SimulateArgs),
    /// Analytic and finite-difference frequency sensitivities.
    Sensitivity(SensitivityArgs),
    /// Frequency spread under uniform component tolerances.
    Montecarlo(MonteCarloArgs),
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    netlist: PathBuf,
}

#[derive(Debug, Args)]
struct DesignArgs {
    /// Target frequency in Hz (engineering suffixes allowed, e.g. 7.96meg).
    #[arg(long, value_parser = eng)]
    f0: f64,
    /// R2 in ohms.
    #[arg(long, value_parser = eng)]
    r2: f64,
    /// Startup margin, R1 = 2·R2·(1+ε).
    #[arg(long, default_value_t = dvccosc::theory::DEFAULT_EPSILON, value_parser = eng)]
    epsilon: f64,
    /// Netlist path [default: $DVCCOSC_OUT_DIR/design.cir].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    netlist: PathBuf,
    /// Simulated time in seconds [default: 200 periods].
    #[arg(long, value_parser = eng)]
    t_end: Option<f64>,
    /// Step in seconds [default: period/1000].
    #[arg(long, value_parser = eng)]
    dt: Option<f64>,
    /// Record every N-th step.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Waveform CSV path [default: $DVCCOSC_OUT_DIR/<netlist stem>.waveform.csv].
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write the spectrum of one probe channel.
    #[arg(long)]
    spectrum_csv: Option<PathBuf>,
    /// Probe label for --spectrum-csv [default: first probe].
    #[arg(long)]
    spectrum_channel: Option<String>,
}

#[derive(Debug, Args)]
struct SensitivityArgs {
    netlist: PathBuf,
    /// Relative finite-difference step.
    #[arg(long, default_value_t = 1e-5, value_parser = eng)]
    step: f64,
}

#[derive(Debug, Args)]
struct MonteCarloArgs {
    netlist: PathBuf,
    /// Relative tolerance on R1, R2, C1, C2 (uniform ±tol).
    #[arg(long, value_parser = eng)]
    tol: f64,
    /// Number of draws.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: u64,
    /// Per-draw CSV path.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn eng(s: &str) -> Result<f64, String> {
    parse_value(s)
}

/// Failure with its exit status.
#[derive(Debug)]
pub enum Failure {
    /// Already formatted by clap.
    Usage(String),
    Input(String),
    Analysis(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Input(_) => 1,
            Failure::Analysis(_) => 2,
        }
    }
}

fn run(argv: Vec<OsString>) -> Result<report::RunReport, Failure> {
    let echo: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            let _ = e.print();
            std::process::exit(0);
        }
        Err(e) => return Err(Failure::Usage(e.render().to_string())),
    };
    match cli.command {
        Command::Analyze(a) => commands::analyze(echo, &a.netlist),
        Command::Design(a) => commands::design(echo, a.f0, a.r2, a.epsilon, a.out),
        Command::Simulate(a) => commands::simulate(
            echo,
            commands::SimulateOptions {
                netlist: a.netlist,
                t_end: a.t_end,
                dt: a.dt,
                stride: a.stride,
                csv: a.csv,
                spectrum_csv: a.spectrum_csv,
                spectrum_channel: a.spectrum_channel,
            },
        ),
        Command::Sensitivity(a) => commands::sensitivity(echo, &a.netlist, a.step),
        Command::Montecarlo(a) => commands::montecarlo(echo, &a.netlist, a.tol, a.n, a.seed, a.csv),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(report) => {
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            match writeln!(std::io::stdout().lock(), "{json}") {
                Err(e) if e.kind() != ErrorKind::BrokenPipe => {
                    eprintln!("error: cannot write report: {e}");
                    ExitCode::from(1)
                }
                _ => ExitCode::SUCCESS,
            }
        }
        Err(failure) => {
            match &failure {
                Failure::Usage(m) => eprint!("{m}"),
                Failure::Input(m) | Failure::Analysis(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(failure.code())
        }
    }
}
