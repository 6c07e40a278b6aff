//! Run-directory writers. Numbers are written at full precision (shortest
//! round-trip form); empty statistics become blank fields.

use std::fs;
use std::path::{Path, PathBuf};

use nimbus_core::metrics::{HourlyHistogram, StatAccumulator};
use nimbus_core::SimulationReport;

use crate::CliError;

pub const RESPONSE_TIMES_HEADER: [&str; 6] = ["metric", "count", "sum_ms", "avg_ms", "min_ms", "max_ms"];
pub const PER_UB_HEADER: [&str; 7] = ["user_base", "region", "count", "sum_ms", "avg_ms", "min_ms", "max_ms"];
pub const PER_DC_HEADER: [&str; 10] = [
    "data_center",
    "region",
    "vm_count",
    "count",
    "sum_ms",
    "avg_ms",
    "min_ms",
    "max_ms",
    "busy_vm_ms",
    "bytes_transferred",
];
pub const HOURLY_UB_HEADER: [&str; 7] = ["user_base", "hour", "count", "sum_ms", "avg_ms", "min_ms", "max_ms"];
pub const HOURLY_DC_HEADER: [&str; 7] = ["data_center", "hour", "count", "sum_ms", "avg_ms", "min_ms", "max_ms"];
pub const COSTS_HEADER: [&str; 6] = ["data_center", "vm_cost", "data_transfer_cost", "memory_cost", "storage_cost", "total"];

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn stat_fields(s: &StatAccumulator) -> [String; 5] {
    [s.count.to_string(), s.sum_ms.to_string(), opt(s.mean_ms()), opt(s.min_ms), opt(s.max_ms)]
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.to_path_buf(), source: e.into() }
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn hourly_rows<'a>(name: &'a str, hist: &'a HourlyHistogram) -> impl Iterator<Item = Vec<String>> + 'a {
    hist.buckets.iter().enumerate().map(move |(hour, s)| {
        let mut row = vec![name.to_string(), hour.to_string()];
        row.extend(stat_fields(s));
        row
    })
}

/// Per-hour series for every user base and data center: 24 rows each.
pub fn emit_plot_data(report: &SimulationReport, dir: &Path) -> Result<(), CliError> {
    let ub_path = dir.join("hourly_ub.csv");
    write_csv(
        &ub_path,
        &HOURLY_UB_HEADER,
        report.user_bases.iter().flat_map(|u| hourly_rows(&u.name, &u.hourly)),
    )?;
    let dc_path = dir.join("hourly_dc.csv");
    write_csv(
        &dc_path,
        &HOURLY_DC_HEADER,
        report.data_centers.iter().flat_map(|d| hourly_rows(&d.name, &d.hourly)),
    )
}

/// Writes `report.json` and every CSV table into `dir`, creating it if needed.
pub fn write_run_dir(report: &SimulationReport, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let json_path = dir.join("report.json");
    fs::write(&json_path, report.to_json() + "\n").map_err(io_err(&json_path))?;

    let overall = [
        ("overall_response_time", &report.overall_response),
        ("data_center_processing_time", &report.overall_processing),
    ];
    write_csv(
        &dir.join("response_times.csv"),
        &RESPONSE_TIMES_HEADER,
        overall.iter().map(|(name, s)| std::iter::once(name.to_string()).chain(stat_fields(s))),
    )?;

    write_csv(
        &dir.join("per_ub.csv"),
        &PER_UB_HEADER,
        report.user_bases.iter().map(|u| {
            [u.name.clone(), u.region.to_string()].into_iter().chain(stat_fields(&u.response))
        }),
    )?;

    write_csv(
        &dir.join("per_dc.csv"),
        &PER_DC_HEADER,
        report.data_centers.iter().map(|d| {
            [d.name.clone(), d.region.to_string(), d.vm_count.to_string()]
                .into_iter()
                .chain(stat_fields(&d.processing))
                .chain([d.busy_vm_ms.to_string(), d.bytes_transferred.to_string()])
        }),
    )?;

    emit_plot_data(report, dir)?;

    let c = &report.costs;
    let totals = [
        "TOTAL".to_string(),
        c.total_vm_cost.to_string(),
        c.total_data_transfer_cost.to_string(),
        c.total_memory_cost.to_string(),
        c.total_storage_cost.to_string(),
        c.grand_total.to_string(),
    ];
    write_csv(
        &dir.join("costs.csv"),
        &COSTS_HEADER,
        c.data_centers
            .iter()
            .map(|d| {
                [
                    d.data_center.clone(),
                    d.vm_cost.to_string(),
                    d.data_transfer_cost.to_string(),
                    d.memory_cost.to_string(),
                    d.storage_cost.to_string(),
                    d.total.to_string(),
                ]
            })
            .chain(std::iter::once(totals)),
    )
}

/// `<scenario>__<balancer>__<broker>__seed<k>` under `root`.
pub fn run_dir_name(report: &SimulationReport) -> String {
    let m = &report.meta;
    let scenario: String = m
        .scenario
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    format!("{scenario}__{}__{}__seed{}", m.balancer, m.broker, m.seed)
}

pub fn run_dir(root: &Path, report: &SimulationReport) -> PathBuf {
    root.join(run_dir_name(report))
}
