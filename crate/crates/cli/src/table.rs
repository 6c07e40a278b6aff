//! Human-readable summary tables; the only place values are rounded.

use std::fmt::Write;

use nimbus_core::metrics::{render_ms, StatAccumulator};
use nimbus_core::SimulationReport;

fn stat_row(out: &mut String, label: &str, s: &StatAccumulator) {
    let _ = writeln!(
        out,
        "  {label:<30}{:>12}{:>12}{:>12}",
        render_ms(s.mean_ms()),
        render_ms(s.min_ms),
        render_ms(s.max_ms)
    );
}

fn header(out: &mut String, title: &str, first: &str) {
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "  {first:<30}{:>12}{:>12}{:>12}", "Avg (ms)", "Min (ms)", "Max (ms)");
}

fn money(v: f64) -> String {
    format!("${:.2}", nimbus_core::metrics::round_half_up_2(v))
}

pub fn render_report(report: &SimulationReport) -> String {
    let m = &report.meta;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Scenario {} | balancer {} | broker {} | seed {} | {} h",
        m.scenario, m.balancer, m.broker, m.seed, m.duration_hours
    );
    let _ = writeln!(out);

    header(&mut out, "Overall response time summary", "");
    stat_row(&mut out, "Overall response time", &report.overall_response);
    stat_row(&mut out, "Data center processing time", &report.overall_processing);
    let _ = writeln!(out);

    header(&mut out, "Response time by user base", "User base");
    for u in &report.user_bases {
        stat_row(&mut out, &u.name, &u.response);
    }
    let _ = writeln!(out);

    header(&mut out, "Data center request servicing times", "Data center");
    for d in &report.data_centers {
        stat_row(&mut out, &d.name, &d.processing);
    }
    let _ = writeln!(out);

    let c = &report.costs;
    let _ = writeln!(out, "Cost");
    let _ = writeln!(out, "  {:<30}{:>12}", "Total virtual machine cost", money(c.total_vm_cost));
    let _ = writeln!(out, "  {:<30}{:>12}", "Total data transfer cost", money(c.total_data_transfer_cost));
    if c.total_memory_cost != 0.0 || c.total_storage_cost != 0.0 {
        let _ = writeln!(out, "  {:<30}{:>12}", "Total memory cost", money(c.total_memory_cost));
        let _ = writeln!(out, "  {:<30}{:>12}", "Total storage cost", money(c.total_storage_cost));
    }
    let _ = writeln!(out, "  {:<30}{:>12}", "Grand total", money(c.grand_total));
    let _ = writeln!(out, "  {:<30}{:>12}{:>16}{:>12}", "Data center", "VM cost", "Data transfer", "Total");
    for d in &c.data_centers {
        let _ = writeln!(
            out,
            "  {:<30}{:>12}{:>16}{:>12}",
            d.data_center,
            money(d.vm_cost),
            money(d.data_transfer_cost),
            money(d.total)
        );
    }
    out
}
