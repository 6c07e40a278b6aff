use std::ops::Range;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nimbus_core::{BalancerPolicy, BrokerPolicy};

/// Geo-distributed cloud workload simulator.
#[derive(Debug, Parser)]
#[command(name = "nimbus", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario and write its report directory.
    Run(RunArgs),
    /// Run the balancer x scenario matrix and write comparison.csv.
    Compare(CompareArgs),
    /// List the builtin scenarios.
    Scenarios,
}

#[derive(Debug, Args)]
pub struct Shared {
    /// Override the balancer policy (rr, esce, throttled).
    #[arg(long)]
    pub balancer: Option<BalancerPolicy>,
    /// Override the broker policy (closest, optimize).
    #[arg(long)]
    pub broker: Option<BrokerPolicy>,
    /// Single seed.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Seed range, `N..M` (exclusive) or `N..=M`.
    #[arg(long, value_parser = parse_seed_range)]
    pub seeds: Option<Range<u64>>,
    /// Output root directory.
    #[arg(long, env = "NIMBUS_OUT", default_value = "nimbus-out")]
    pub out: PathBuf,
    /// Charge memory and storage in the cost ledger.
    #[arg(long)]
    pub accrue_memory_storage_costs: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Builtin scenario name or path to a scenario JSON file.
    #[arg(long, default_value = "step1")]
    pub scenario: String,
    #[command(flatten)]
    pub shared: Shared,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Scenarios to compare (repeatable); builtin names or JSON paths.
    #[arg(long = "scenario")]
    pub scenarios: Vec<String>,
    #[command(flatten)]
    pub shared: Shared,
}

impl Shared {
    /// Seeds to run; `None` means the scenario's own seed.
    pub fn seed_list(&self) -> Option<Vec<u64>> {
        match (&self.seeds, self.seed) {
            (Some(r), _) => Some(r.clone().collect()),
            (None, Some(s)) => Some(vec![s]),
            (None, None) => None,
        }
    }
}

pub fn parse_seed_range(s: &str) -> Result<Range<u64>, String> {
    let bad = || format!("expected N..M or N..=M, got '{s}'");
    let (lo, hi, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(bad());
    };
    let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
    let end = if inclusive { hi.checked_add(1).ok_or_else(bad)? } else { hi };
    if end <= lo {
        return Err(format!("seed range '{s}' is empty"));
    }
    Ok(lo..end)
}
