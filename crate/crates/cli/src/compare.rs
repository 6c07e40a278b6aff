//! Balancer x broker x scenario matrix, optionally replicated across seeds.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use nimbus_core::metrics::render_ms;
use nimbus_core::{BalancerPolicy, BrokerPolicy, ScenarioConfig, SimulationReport};
use rayon::prelude::*;

use crate::args::CompareArgs;
use crate::export::opt;
use crate::{load_scenario, prepare, run_and_write, CliError};

pub const COMPARISON_HEADER: [&str; 12] = [
    "scenario",
    "balancer",
    "broker",
    "seeds",
    "runs_ok",
    "avg_response_ms_mean",
    "avg_response_ms_stdev",
    "avg_processing_ms_mean",
    "avg_processing_ms_stdev",
    "total_cost_mean",
    "total_cost_stdev",
    "status",
];

/// Mean and sample standard deviation; the deviation needs at least two values.
pub fn mean_stdev(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

#[derive(Debug)]
pub struct CellSummary {
    pub scenario: String,
    pub balancer: BalancerPolicy,
    pub broker: BrokerPolicy,
    pub seeds: Vec<u64>,
    pub reports: Vec<SimulationReport>,
    /// First failure among the cell's runs, with its exit code.
    pub failure: Option<Failure>,
}

impl CellSummary {
    fn metric(&self, f: impl Fn(&SimulationReport) -> Option<f64>) -> (Option<f64>, Option<f64>) {
        if self.failure.is_some() {
            return (None, None);
        }
        let values: Vec<f64> = self.reports.iter().filter_map(f).collect();
        mean_stdev(&values)
    }

    pub fn response(&self) -> (Option<f64>, Option<f64>) {
        self.metric(|r| r.overall_response.mean_ms())
    }

    pub fn processing(&self) -> (Option<f64>, Option<f64>) {
        self.metric(|r| r.overall_processing.mean_ms())
    }

    pub fn cost(&self) -> (Option<f64>, Option<f64>) {
        self.metric(|r| Some(r.costs.grand_total))
    }

    fn record(&self) -> Vec<String> {
        let (rm, rs) = self.response();
        let (pm, ps) = self.processing();
        let (cm, cs) = self.cost();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let status = match &self.failure {
            None => "ok".to_string(),
            Some((msg, _)) => format!("failed: {msg}"),
        };
        vec![
            self.scenario.clone(),
            self.balancer.to_string(),
            self.broker.to_string(),
            seeds.join(" "),
            self.reports.len().to_string(),
            opt(rm),
            opt(rs),
            opt(pm),
            opt(ps),
            opt(cm),
            opt(cs),
            status,
        ]
    }
}

/// A failed cell: message and exit code.
type Failure = (String, i32);

struct Job {
    cell: usize,
    config: Result<ScenarioConfig, Failure>,
    seed: Option<u64>,
}

fn render_ranking(cells: &[CellSummary]) -> String {
    let mut out = String::new();
    let mut scenarios: Vec<&str> = Vec::new();
    for c in cells {
        if !scenarios.contains(&c.scenario.as_str()) {
            scenarios.push(&c.scenario);
        }
    }
    for scenario in scenarios {
        let mut rows: Vec<&CellSummary> = cells.iter().filter(|c| c.scenario == scenario).collect();
        // stable sort keeps matrix order for ties and failed cells
        rows.sort_by(|a, b| {
            let key = |c: &CellSummary| c.response().0.unwrap_or(f64::INFINITY);
            key(a).total_cmp(&key(b))
        });
        let _ = writeln!(out, "Scenario {scenario}");
        let _ = writeln!(
            out,
            "  {:<6}{:<12}{:<10}{:>18}{:>20}{:>14}",
            "Rank", "Balancer", "Broker", "Avg response (ms)", "Avg processing (ms)", "Total cost"
        );
        for (i, c) in rows.iter().enumerate() {
            if let Some((msg, _)) = &c.failure {
                let _ = writeln!(out, "  {:<6}{:<12}{:<10}FAILED: {msg}", "-", c.balancer.to_string(), c.broker.to_string());
                continue;
            }
            let cost = c.cost().0.map(|v| format!("${v:.2}")).unwrap_or_else(|| "—".into());
            let _ = writeln!(
                out,
                "  {:<6}{:<12}{:<10}{:>18}{:>20}{:>14}",
                i + 1,
                c.balancer.to_string(),
                c.broker.to_string(),
                render_ms(c.response().0),
                render_ms(c.processing().0),
                cost
            );
        }
        let _ = writeln!(out);
    }
    out
}

fn write_comparison_csv(path: &Path, cells: &[CellSummary]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Io { path: path.to_path_buf(), source: e.into() };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(COMPARISON_HEADER).map_err(err)?;
    for c in cells {
        w.write_record(c.record()).map_err(err)?;
    }
    w.flush().map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Runs every cell, isolating failures; returns cells in matrix order.
pub fn run_matrix(a: &CompareArgs) -> Result<Vec<CellSummary>, CliError> {
    if a.scenarios.is_empty() {
        return Err(CliError::Usage("compare needs at least one --scenario".into()));
    }
    let balancers: Vec<BalancerPolicy> = a.shared.balancer.map_or(BalancerPolicy::ALL.to_vec(), |b| vec![b]);
    let broker = a.shared.broker.unwrap_or(BrokerPolicy::ClosestDataCenter);
    let seeds: Vec<Option<u64>> = match a.shared.seed_list() {
        Some(list) => list.into_iter().map(Some).collect(),
        None => vec![None],
    };

    let mut cells = Vec::new();
    let mut jobs = Vec::new();
    for spec in &a.scenarios {
        let loaded = load_scenario(spec).map_err(|e| (e.to_string(), e.exit_code()));
        let label = loaded.as_ref().map(|c| c.name.clone()).unwrap_or_else(|_| spec.clone());
        for &balancer in &balancers {
            let cell = cells.len();
            cells.push(CellSummary {
                scenario: label.clone(),
                balancer,
                broker,
                seeds: Vec::new(),
                reports: Vec::new(),
                failure: None,
            });
            for &seed in &seeds {
                let config = loaded.clone().map(|mut c| {
                    c.balancer_policy = balancer;
                    c.broker_policy = broker;
                    c
                });
                jobs.push(Job { cell, config, seed });
            }
        }
    }

    let root = &a.shared.out;
    let results: Vec<(usize, Result<SimulationReport, Failure>)> = jobs
        .into_par_iter()
        .map(|job| {
            let outcome = job.config.and_then(|config| {
                prepare(config, &a.shared, job.seed)
                    .and_then(|s| run_and_write(&s, root))
                    .map(|(report, _)| report)
                    .map_err(|e| (e.to_string(), e.exit_code()))
            });
            (job.cell, outcome)
        })
        .collect();

    for (cell, outcome) in results {
        let c = &mut cells[cell];
        match outcome {
            Ok(report) => {
                c.seeds.push(report.meta.seed);
                c.reports.push(report);
            }
            Err(failure) => {
                c.failure.get_or_insert(failure);
            }
        }
    }
    Ok(cells)
}

pub fn cmd_compare(a: &CompareArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cells = run_matrix(a)?;
    let root = &a.shared.out;
    std::fs::create_dir_all(root).map_err(|source| CliError::Io { path: root.clone(), source })?;
    write_comparison_csv(&root.join("comparison.csv"), &cells)?;
    let ranking = render_ranking(&cells);
    let summary_path = root.join("summary.txt");
    std::fs::write(&summary_path, &ranking).map_err(|source| CliError::Io { path: summary_path, source })?;
    let _ = write!(out, "{ranking}");
    let _ = writeln!(out, "Wrote {}", root.join("comparison.csv").display());

    let failed: Vec<&CellSummary> = cells.iter().filter(|c| c.failure.is_some()).collect();
    if failed.is_empty() {
        return Ok(());
    }
    let code = failed.iter().filter_map(|c| c.failure.as_ref().map(|f| f.1)).max().unwrap_or(1);
    Err(CliError::CellsFailed { failed: failed.len(), total: cells.len(), code })
}
