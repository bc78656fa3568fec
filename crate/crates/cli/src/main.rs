//! `phbt`: run heralded-phonon scenarios from JSON config files.
//!
//! Every subcommand prints its result as one line of JSON on stdout.
//! Exit codes: 0 ok, 2 config, 3 numeric, 4 I/O.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use phbt_core::inference::HeraldPolicy;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<phbt_core::Error> for CliError {
    fn from(e: phbt_core::Error) -> Self {
        use phbt_core::Error as E;
        match e {
            E::InvalidParameter { .. } | E::DimensionMismatch(..) => CliError::Config(e.to_string()),
            E::Io(_) | E::Json(_) | E::Csv(_) | E::Format(_) => CliError::Io(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "phbt", version, about = "Heralded phonon g2 prediction, simulation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario (or calibration input) file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Where to write the result file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides run.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides run.n_cycles.
    #[arg(long, global = true)]
    pub cycles: Option<u64>,
    /// Overrides run.dim.
    #[arg(long, global = true)]
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Policy {
    D1,
    D2,
    Any,
    Unconditional,
}

impl From<Policy> for HeraldPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::D1 => HeraldPolicy::D1,
            Policy::D2 => HeraldPolicy::D2,
            Policy::Any => HeraldPolicy::Any,
            Policy::Unconditional => HeraldPolicy::Unconditional,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Axis {
    NInit,
    DeltaN,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SweepMode {
    /// Model prediction with the interval expected at run.n_heralds.
    Predict,
    /// Simulated record and estimator per point.
    Simulate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Theta {
    Locked,
    Free,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Model g2 for the configured scenario.
    Predict {
        /// Also report the click-level prediction at the configured detectors.
        #[arg(long)]
        click: bool,
    },
    /// Write a seeded click record (CSV plus metadata sidecar) to --out.
    Simulate,
    /// Estimate g2 from a click record.
    Estimate {
        #[arg(long)]
        record: PathBuf,
        /// Overrides run.herald_policy.
        #[arg(long, value_enum)]
        policy: Option<Policy>,
        /// Overrides run.delta_n.
        #[arg(long, allow_hyphen_values = true)]
        delta_n: Option<i64>,
    },
    /// Invert sideband count rates into occupation and coupling.
    Calibrate,
    /// Lowest g2 reachable by displacing and squeezing a thermal state.
    GaussianBound {
        /// Defaults to heating.n_init of --config.
        #[arg(long)]
        n_init: Option<f64>,
        #[arg(long, value_enum, default_value = "locked")]
        theta: Theta,
        /// Occupation window LO,HI.
        #[arg(long, value_delimiter = ',')]
        window: Option<Vec<f64>>,
    },
    /// g2 against n_init or delta_n, as CSV.
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value = "predict")]
        mode: SweepMode,
    },
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let c = &cli.common;
    match cli.command {
        Command::Predict { click } => commands::predict(c, click),
        Command::Simulate => commands::simulate(c),
        Command::Estimate { record, policy, delta_n } => commands::estimate(c, &record, policy.map(Into::into), delta_n),
        Command::Calibrate => commands::calibrate(c),
        Command::GaussianBound { n_init, theta, window } => commands::gaussian_bound(c, n_init, theta, window),
        Command::Sweep { axis, values, mode } => commands::sweep(c, axis, &values, mode),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("phbt: {e}");
            ExitCode::from(e.code())
        }
    }
}
