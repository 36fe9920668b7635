//! `parcell`: simulate parallel-cell battery packs, replay the SOC observer
//! against simulated measurements, and run observability and gain-validity
//! reports, all driven by TOML scenario configs.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ScenarioConfig;
use runner::Outcome;

const BUNDLED: &[(&str, &str)] = &[
    (
        "current-share",
        include_str!("../scenarios/current-share.toml"),
    ),
    ("soc-observer", include_str!("../scenarios/soc-observer.toml")),
];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
}

impl From<parcell::Error> for CliError {
    fn from(e: parcell::Error) -> Self {
        use parcell::Error::*;
        match e {
            SingularA22 { .. }
            | ImpulseUnobservable { .. }
            | VoltageMismatch { .. }
            | NonFinite { .. }
            | SocOutOfRange { .. }
            | EigSolverFailure
            | SingularG22 { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "parcell",
    version,
    about = "Parallel-cell battery pack simulation and SOC estimation",
    after_help = "Output directory resolution: --out flag, then $PARCELL_OUT_DIR, \
                  then ./parcell-out.\nExit codes: 0 success, 2 config error, \
                  3 numerical failure, 4 warnings under --strict."
)]
struct Cli {
    /// Treat observability and gain-validity warnings as errors (exit 4).
    #[arg(long, global = true)]
    strict: bool,

    /// Output directory for CSVs and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Source {
    /// Path to a scenario TOML file.
    #[arg(long, conflicts_with = "bundled", required_unless_present = "bundled")]
    config: Option<PathBuf>,

    /// Name of a bundled scenario: current-share, soc-observer.
    #[arg(long)]
    bundled: Option<String>,
}

impl Source {
    fn load(&self) -> Result<ScenarioConfig, CliError> {
        match (&self.config, &self.bundled) {
            (Some(path), None) => ScenarioConfig::load(path),
            (None, Some(name)) => {
                let text = BUNDLED
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, t)| *t)
                    .ok_or_else(|| {
                        CliError::Config(format!(
                            "unknown bundled scenario {name:?}; available: {}",
                            BUNDLED
                                .iter()
                                .map(|(n, _)| *n)
                                .collect::<Vec<_>>()
                                .join(", ")
                        ))
                    })?;
                ScenarioConfig::from_embedded(name, text)
            }
            _ => unreachable!("clap enforces exactly one source"),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the pack over the configured drive cycle.
    Simulate {
        #[command(flatten)]
        source: Source,
    },
    /// Simulate the pack, then replay the observer on its measurements.
    Estimate {
        #[command(flatten)]
        source: Source,
    },
    /// Observability report for the configured pack at a state.
    Analyze {
        #[command(flatten)]
        source: Source,
        /// Analysis point as 2n comma-separated values z_1,vc_1,z_2,vc_2,...
        /// (defaults to the configured initial state).
        #[arg(long)]
        at: Option<String>,
        /// Highest Lie-derivative order in the rank test.
        #[arg(long, default_value_t = 2)]
        max_order: usize,
    },
    /// Gain-validity report, optionally sweeping scalar multiples of the gain.
    ValidateGain {
        #[command(flatten)]
        source: Source,
        /// Sweep specification LO:HI:STEPS (log-spaced scale factors).
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Run several scenario configs in parallel, one subdirectory each.
    Batch {
        /// Scenario TOML files.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os("PARCELL_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("parcell-out"))
}

fn parse_at(at: &Option<String>) -> Result<Option<Vec<f64>>, CliError> {
    match at {
        None => Ok(None),
        Some(text) => text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Config(format!("--at: {s:?} is not a number")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some),
    }
}

fn parse_sweep(sweep: &Option<String>) -> Result<Option<(f64, f64, usize)>, CliError> {
    match sweep {
        None => Ok(None),
        Some(text) => {
            let parts: Vec<&str> = text.split(':').collect();
            let bad = || CliError::Config(format!("--sweep: expected LO:HI:STEPS, got {text:?}"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let lo = parts[0].trim().parse::<f64>().map_err(|_| bad())?;
            let hi = parts[1].trim().parse::<f64>().map_err(|_| bad())?;
            let steps = parts[2].trim().parse::<usize>().map_err(|_| bad())?;
            Ok(Some((lo, hi, steps)))
        }
    }
}

fn exit_code(outcome: Outcome, strict: bool) -> u8 {
    match outcome {
        Outcome::Clean => 0,
        Outcome::Warned if strict => 4,
        Outcome::Warned => 0,
    }
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    let dir = out_dir(&cli.out);
    match &cli.cmd {
        Cmd::Simulate { source } => {
            let cfg = source.load()?;
            let outcome = runner::run_simulate(&cfg, &dir, false)?;
            Ok(exit_code(outcome, cli.strict))
        }
        Cmd::Estimate { source } => {
            let cfg = source.load()?;
            let outcome = runner::run_estimate(&cfg, &dir, cli.strict, false)?;
            Ok(exit_code(outcome, cli.strict))
        }
        Cmd::Analyze {
            source,
            at,
            max_order,
        } => {
            let cfg = source.load()?;
            let point = parse_at(at)?;
            let outcome = runner::run_analyze(&cfg, &dir, point, *max_order)?;
            Ok(exit_code(outcome, cli.strict))
        }
        Cmd::ValidateGain { source, sweep } => {
            let cfg = source.load()?;
            let sweep_range = parse_sweep(sweep)?;
            let outcome = runner::run_validate_gain(&cfg, &dir, sweep_range)?;
            Ok(exit_code(outcome, cli.strict))
        }
        Cmd::Batch { configs } => {
            let items = runner::run_batch(configs, &dir, cli.strict);
            // severity order, not numeric order: a numerical failure beats a
            // config error beats a strict-mode warning
            let severity = |code: u8| match code {
                0 => 0,
                4 => 1,
                2 => 2,
                _ => 3,
            };
            let mut worst = 0u8;
            for item in &items {
                let code = match &item.result {
                    Ok(outcome) => {
                        println!(
                            "{}: {}",
                            item.name,
                            if *outcome == Outcome::Warned {
                                "ok (with warnings)"
                            } else {
                                "ok"
                            }
                        );
                        exit_code(*outcome, cli.strict)
                    }
                    Err(e) => {
                        println!("{}: error: {e}", item.name);
                        match e {
                            CliError::Config(_) => 2,
                            CliError::Numerical(_) => 3,
                        }
                    }
                };
                if severity(code) > severity(worst) {
                    worst = code;
                }
            }
            Ok(worst)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Config(_) => ExitCode::from(2),
                CliError::Numerical(_) => ExitCode::from(3),
            }
        }
    }
}
