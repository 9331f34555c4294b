mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{Config, Override, Sweep};
use crate::error::CliError;
use crate::output::{Cell, Format, Report, Table};

const UNITS: &str = "\
Units: lengths in multiples of the attenuation length L_att, times in s,
rates in 1/s. A config file only lists the keys it changes; run
`dlcz defaults` for the full set. Output goes to stdout unless --output,
output.path or DLCZ_OUTPUT_DIR is given.

Exit codes: 0 success, 1 output not writable, 2 invalid config or
arguments, 3 numerical failure, 4 infeasible parameters.";

#[derive(Debug, Parser)]
#[command(name = "dlcz", version, about = "Ensemble-based quantum repeater simulator", after_help = UNITS)]
struct Cli {
    /// TOML config merged over the defaults.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Overrides trials.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Significant digits of printed numbers (default 9).
    #[arg(long, global = true)]
    precision: Option<usize>,
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Repeat over evenly spaced values of a numeric config key.
    #[arg(long, global = true, value_name = "KEY=A:B:STEPS")]
    sweep: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand)]
enum Command {
    /// Effective rates of the Raman-pumped ensemble.
    Rates,
    /// Master-equation growth of collective and noise modes.
    Dynamics,
    /// Per-level vacuum coefficients, success probabilities and times.
    Chain,
    /// Communication-time ratio versus distance and nesting level.
    Scaling,
    /// Optimal segment length at fixed distance.
    Optimize,
    /// Correlations and CHSH value of the final link.
    Chsh,
    /// Probabilistic teleportation of a polarization qubit.
    Teleport,
    /// Sampled entanglement-based key distribution.
    Ekert,
    /// Sampled waiting time of the full chain.
    Montecarlo {
        /// Worker threads; results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
        /// Also write every trial time as CSV.
        #[arg(long, value_name = "PATH")]
        trials_out: Option<PathBuf>,
    },
    /// Print the default config.
    Defaults,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Rates => "rates",
            Command::Dynamics => "dynamics",
            Command::Chain => "chain",
            Command::Scaling => "scaling",
            Command::Optimize => "optimize",
            Command::Chsh => "chsh",
            Command::Teleport => "teleport",
            Command::Ekert => "ekert",
            Command::Montecarlo { .. } => "montecarlo",
            Command::Defaults => "defaults",
        }
    }

    fn default_format(&self) -> Format {
        match self {
            Command::Dynamics | Command::Chain | Command::Scaling => Format::Csv,
            _ => Format::Json,
        }
    }

    fn run(&self, cfg: &Config) -> Result<Report, CliError> {
        match self {
            Command::Rates => commands::rates(cfg),
            Command::Dynamics => commands::dynamics(cfg),
            Command::Chain => commands::chain_report(cfg),
            Command::Scaling => commands::scaling(cfg),
            Command::Optimize => commands::optimize(cfg),
            Command::Chsh => commands::chsh(cfg),
            Command::Teleport => commands::teleport(cfg),
            Command::Ekert => commands::ekert(cfg),
            Command::Montecarlo { threads, .. } => commands::montecarlo(cfg, *threads),
            Command::Defaults => unreachable!("handled before loading"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dlcz {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::Defaults = cli.command {
        print!("{}", config::default_toml());
        return Ok(());
    }
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        overrides.push(("trials.seed".to_string(), Override::Integer(seed)));
    }
    if let Some(p) = cli.precision {
        overrides.push(("output.precision".to_string(), Override::Integer(p as u64)));
    }
    let sweep = cli.sweep.as_deref().map(Sweep::parse).transpose()?;

    let base = config::load(cli.config.as_deref(), &overrides)?;
    let report = match &sweep {
        None => cli.command.run(&base)?,
        Some(s) => {
            let mut points = Vec::new();
            for &v in &s.values {
                let mut ov = overrides.clone();
                ov.push((s.key.clone(), Override::Real(v)));
                let cfg = config::load(cli.config.as_deref(), &ov)?;
                points.push((v, cli.command.run(&cfg)?));
            }
            combine_sweep(&s.key, points)
        }
    };

    let format = cli
        .format
        .or(base.output.format)
        .unwrap_or_else(|| cli.command.default_format());
    let digits = base.output.precision;
    let text = match format {
        Format::Csv => output::render_csv(&report, digits)?,
        Format::Json => output::render_json(&report, digits),
    };
    let explicit = cli.output.clone().or_else(|| base.output.path.as_ref().map(PathBuf::from));
    let default_name = format!("{}.{}", cli.command.name(), format.extension());
    output::write(&text, output::destination(explicit.as_deref(), &default_name).as_deref())?;

    if let Command::Montecarlo {
        trials_out: Some(path),
        ..
    } = &cli.command
    {
        if sweep.is_some() {
            return Err(CliError::Config("--trials-out cannot be combined with --sweep".into()));
        }
        let trials = output::render_csv(&commands::trial_table(&base)?, digits)?;
        output::write(&trials, output::destination(Some(path), "trials.csv").as_deref())?;
    }
    Ok(())
}

/// One table with the swept value as first column, one JSON point per value.
fn combine_sweep(key: &str, points: Vec<(f64, Report)>) -> Report {
    let mut table = Table::default();
    let mut notes = Vec::new();
    let mut json_points = Vec::new();
    for (v, r) in points {
        if table.columns.is_empty() {
            table.columns = std::iter::once(key.to_string()).chain(r.table.columns.clone()).collect();
        }
        for row in r.table.rows {
            table.rows.push(std::iter::once(Cell::Num(v)).chain(row).collect());
        }
        notes.extend(r.notes.into_iter().map(|(n, x)| (format!("{key}={v} {n}"), x)));
        let mut point = serde_json::Map::new();
        point.insert(key.to_string(), json!(v));
        point.extend(r.json);
        json_points.push(Value::Object(point));
    }
    let json = json!({ "sweep_key": key, "points": json_points });
    Report {
        json: match json {
            Value::Object(m) => m,
            _ => unreachable!(),
        },
        table,
        notes,
    }
}
