//! `rdl`: simulate reinforcing risk-decision cohorts, analyze their limits,
//! score defendants against a point table and fit OLS regressions.
//!
//! Exit codes: 0 success, 1 validation error, 2 numeric error, 3 I/O error.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use rdl_core::scoring::CurrentCharge;

use commands::analyze::AnalyzeConfig;
use commands::regress::{RegressConfig, RegressInput};
use commands::score::ScoreConfig;
use config::{Format, Overrides, ScenarioConfig};
use error::{CliError, CliResult};
use output::{read_to_string, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "rdl", version, about = "Reinforcing risk-decision simulations and scoring")]
struct Cli {
    /// Worker threads; output bytes do not depend on it.
    #[arg(long, global = true, env = "RDL_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write sample paths as CSV (trajectory_id, step, p, outcome) or JSON.
    Simulate(Overrides),

    /// Checkpoint means, extreme mass, histograms and group gaps.
    Cohort {
        #[command(flatten)]
        scenario: Overrides,
        /// Also write per-member endpoints to this CSV.
        #[arg(long)]
        endpoints: Option<PathBuf>,
        #[arg(long)]
        epsilon: Option<f64>,
    },

    /// Compare endpoints with the Beta limit law.
    Analyze {
        /// Endpoint CSV with a `p` column; the scenario is simulated when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        scenario: Overrides,
        #[arg(long)]
        epsilon: Option<f64>,
    },

    /// Derive the nine factors from a history and score them.
    Score {
        /// JSON Lines event history.
        #[arg(long)]
        events: Option<PathBuf>,
        /// JSON point table.
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        age: u32,
        #[arg(long)]
        violent_offense: bool,
        #[arg(long)]
        pending_charge: bool,
        /// Assessment date, YYYY-MM-DD.
        #[arg(long)]
        as_of: NaiveDate,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },

    /// Fit OLS on a CSV, a synthetic cohort spec, or the built-in scenario.
    Regress {
        #[arg(long, group = "source", requires = "y")]
        csv: Option<PathBuf>,
        /// Outcome column of `--csv`.
        #[arg(long)]
        y: Option<String>,
        /// Comma-separated regressors; all other columns by default.
        #[arg(long, value_delimiter = ',')]
        x: Option<Vec<String>>,
        #[arg(long)]
        no_intercept: bool,
        /// Synthetic cohort spec JSON.
        #[arg(long, group = "source")]
        synth: Option<PathBuf>,
        /// Built-in treatment-effect scenario.
        #[arg(long, group = "source", value_parser = ["confinement"])]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
    },

    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        /// Output path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rdl: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::validation("--threads: must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::validation(format!("--threads: {e}")))?;
    }

    let (manifest, out) = match cli.command {
        Command::Simulate(flags) => {
            let cfg = flags.load()?;
            (commands::simulate::run(&cfg)?, cfg.output.path)
        }
        Command::Cohort {
            scenario,
            endpoints,
            epsilon,
        } => {
            let mut cfg = scenario.load()?;
            if endpoints.is_some() {
                cfg.output.endpoints = endpoints;
            }
            if let Some(e) = epsilon {
                cfg.output.epsilon = e;
            }
            (commands::cohort::run(&cfg)?, cfg.output.path)
        }
        Command::Analyze {
            input,
            scenario,
            epsilon,
        } => {
            let mut cfg = scenario.load()?;
            if let Some(e) = epsilon {
                cfg.output.epsilon = e;
            }
            let out = cfg.output.path.clone();
            let cfg = AnalyzeConfig { input, scenario: cfg };
            (commands::analyze::run(&cfg, &[])?, out)
        }
        Command::Score {
            events,
            table,
            age,
            violent_offense,
            pending_charge,
            as_of,
            out,
            format,
        } => {
            let cfg = ScoreConfig {
                events,
                table,
                current: CurrentCharge {
                    age,
                    violent_offense,
                    pending_charge,
                },
                as_of,
                format,
                out: out.clone(),
            };
            (commands::score::run(&cfg, &[])?, out)
        }
        Command::Regress {
            csv,
            y,
            x,
            no_intercept,
            synth,
            scenario,
            seed,
            out,
            format,
        } => {
            let input = if let Some(path) = csv {
                RegressInput::Csv {
                    path,
                    y: y.expect("clap enforces --y with --csv"),
                    x,
                    intercept: !no_intercept,
                }
            } else if let Some(path) = synth {
                let text = read_to_string(&path)?;
                let mut spec: rdl_core::SynthCohortSpec = config::from_json(&text)
                    .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
                if let Some(s) = seed {
                    spec.seed = s;
                }
                RegressInput::Synth { spec }
            } else if scenario.is_some() {
                RegressInput::Synth {
                    spec: commands::regress::confinement_spec(seed.unwrap_or(0))?,
                }
            } else {
                return Err(CliError::validation(
                    "regress needs one of --csv, --synth or --scenario",
                ));
            };
            let cfg = RegressConfig {
                input,
                format,
                out: out.clone(),
            };
            (commands::regress::run(&cfg, &[])?, out)
        }
        Command::Replay { manifest, out } => replay(&manifest, out)?,
    };
    manifest.emit(out.as_deref())
}

fn replay(path: &std::path::Path, out: Option<PathBuf>) -> CliResult<(RunManifest, Option<PathBuf>)> {
    let text = read_to_string(path)?;
    let recorded: RunManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let bad_config = |e: serde_json::Error| {
        CliError::validation(format!("{}: config: {e}", path.display()))
    };
    let manifest = match recorded.command.as_str() {
        "simulate" | "cohort" => {
            let mut cfg: ScenarioConfig =
                serde_json::from_value(recorded.config.clone()).map_err(bad_config)?;
            cfg.output.path = out.clone();
            if recorded.command == "simulate" {
                commands::simulate::run(&cfg)?
            } else {
                commands::cohort::run(&cfg)?
            }
        }
        "analyze" => {
            let mut cfg: AnalyzeConfig =
                serde_json::from_value(recorded.config.clone()).map_err(bad_config)?;
            cfg.scenario.output.path = out.clone();
            commands::analyze::run(&cfg, &recorded.inputs)?
        }
        "score" => {
            let mut cfg: ScoreConfig =
                serde_json::from_value(recorded.config.clone()).map_err(bad_config)?;
            cfg.out = out.clone();
            commands::score::run(&cfg, &recorded.inputs)?
        }
        "regress" => {
            let mut cfg: RegressConfig =
                serde_json::from_value(recorded.config.clone()).map_err(bad_config)?;
            cfg.out = out.clone();
            commands::regress::run(&cfg, &recorded.inputs)?
        }
        other => {
            return Err(CliError::validation(format!(
                "{}: unknown command `{other}`",
                path.display()
            )))
        }
    };
    Ok((manifest, out))
}
