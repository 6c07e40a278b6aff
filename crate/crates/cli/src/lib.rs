//! The `nimbus` command line: scenario loading, single runs, comparison
//! matrices and report export.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nimbus_core::scenario::BUILTIN_NAMES;
use nimbus_core::{builtin, parse_scenario, validate, ScenarioConfig, ScenarioError, SimError, SimulationReport, ValidatedScenario};
use thiserror::Error;

pub mod args;
pub mod compare;
pub mod export;
pub mod table;

pub use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Scenario(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("simulation invariant violated: {0}")]
    Simulation(#[from] SimError),
    #[error("{failed} of {total} comparison cells failed")]
    CellsFailed { failed: usize, total: usize, code: i32 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Scenario(_) | CliError::Io { .. } => 1,
            CliError::Simulation(_) => 2,
            CliError::CellsFailed { code, .. } => *code,
        }
    }
}

fn scenario_error(source: &str, e: ScenarioError) -> CliError {
    CliError::Scenario(format!("{source}: {e}"))
}

/// A builtin name, or else a path to a scenario JSON file.
pub fn load_scenario(spec: &str) -> Result<ScenarioConfig, CliError> {
    if BUILTIN_NAMES.iter().any(|(n, _)| *n == spec) {
        return builtin(spec).map_err(|e| scenario_error(spec, e));
    }
    let path = Path::new(spec);
    if !path.is_file() {
        let names: Vec<&str> = BUILTIN_NAMES.iter().map(|(n, _)| *n).collect();
        return Err(CliError::Scenario(format!(
            "unknown scenario '{spec}': not a builtin ({}) and no such file",
            names.join(", ")
        )));
    }
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    parse_scenario(&text).map_err(|e| scenario_error(spec, e))
}

/// Applies command-line overrides and validates.
pub fn prepare(mut config: ScenarioConfig, shared: &args::Shared, seed: Option<u64>) -> Result<ValidatedScenario, CliError> {
    if let Some(b) = shared.balancer {
        config.balancer_policy = b;
    }
    if let Some(b) = shared.broker {
        config.broker_policy = b;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if shared.accrue_memory_storage_costs {
        config.cost_rates.accrue_memory_storage = true;
    }
    let name = config.name.clone();
    validate(config).map_err(|e| scenario_error(&name, e))
}

/// Simulates and writes the run directory under `root`; returns the report and its directory.
pub fn run_and_write(scenario: &ValidatedScenario, root: &Path) -> Result<(SimulationReport, PathBuf), CliError> {
    let report = nimbus_core::run(scenario)?;
    let dir = export::run_dir(root, &report);
    export::write_run_dir(&report, &dir)?;
    Ok((report, dir))
}

pub fn cmd_run(a: &args::RunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let config = load_scenario(&a.scenario)?;
    let seeds: Vec<Option<u64>> = match a.shared.seed_list() {
        Some(list) => list.into_iter().map(Some).collect(),
        None => vec![None],
    };
    for seed in seeds {
        let scenario = prepare(config.clone(), &a.shared, seed)?;
        let start = Instant::now();
        let (report, dir) = run_and_write(&scenario, &a.shared.out)?;
        let wall = start.elapsed();
        let _ = write!(out, "{}", table::render_report(&report));
        let _ = writeln!(out, "Wall time: {:.3} s", wall.as_secs_f64());
        let _ = writeln!(out, "Wrote {}", dir.display());
        let _ = writeln!(out);
    }
    Ok(())
}

pub fn cmd_scenarios(out: &mut dyn Write) -> Result<(), CliError> {
    for (name, description) in BUILTIN_NAMES {
        let _ = writeln!(out, "{name:<12} {description}");
    }
    Ok(())
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Run(a) => cmd_run(&a, out),
        Command::Compare(a) => compare::cmd_compare(&a, out),
        Command::Scenarios => cmd_scenarios(out),
    }
}
