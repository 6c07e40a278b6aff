//! Response/processing statistics, hourly histograms and the cost ledger.
//!
//! Every batch is weighted by its group size so counts and means are in user
//! requests. Values keep full precision; rounding happens only in [`render_ms`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{CostRates, ValidatedScenario};
use crate::traffic::{hour_of_day, HOURS_PER_DAY};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("negative duration {duration} ms recorded for {what} {id}")]
    NegativeDuration { what: &'static str, id: usize, duration: f64 },
}

/// Weighted count / sum / min / max of a millisecond quantity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatAccumulator {
    pub count: u64,
    pub sum_ms: f64,
    pub min_ms: Option<f64>,
    pub max_ms: Option<f64>,
}

impl StatAccumulator {
    pub fn record(&mut self, value_ms: f64, weight: u64) {
        if weight == 0 {
            return;
        }
        self.count += weight;
        self.sum_ms += value_ms * weight as f64;
        self.min_ms = Some(self.min_ms.map_or(value_ms, |m| m.min(value_ms)));
        self.max_ms = Some(self.max_ms.map_or(value_ms, |m| m.max(value_ms)));
    }

    pub fn merge(&mut self, other: &StatAccumulator) {
        self.count += other.count;
        self.sum_ms += other.sum_ms;
        for (mine, theirs, pick) in [
            (&mut self.min_ms, other.min_ms, f64::min as fn(f64, f64) -> f64),
            (&mut self.max_ms, other.max_ms, f64::max),
        ] {
            *mine = match (*mine, theirs) {
                (Some(a), Some(b)) => Some(pick(a, b)),
                (a, b) => a.or(b),
            };
        }
    }

    pub fn mean_ms(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_ms / self.count as f64)
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

/// 24 hour-of-day buckets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyHistogram {
    pub buckets: Vec<StatAccumulator>,
}

impl Default for HourlyHistogram {
    fn default() -> Self {
        HourlyHistogram {
            buckets: vec![StatAccumulator::default(); HOURS_PER_DAY as usize],
        }
    }
}

impl HourlyHistogram {
    pub fn record(&mut self, at_ms: f64, value_ms: f64, weight: u64) {
        self.buckets[hour_of_day(at_ms) as usize].record(value_ms, weight);
    }

    pub fn total_count(&self) -> u64 {
        self.buckets.iter().map(|b| b.count).sum()
    }
}

/// `$` for running `vm_count` VMs for `duration_hours`.
pub fn vm_cost(vm_count: u64, duration_hours: f64, rates: &CostRates) -> f64 {
    vm_count as f64 * duration_hours * rates.vm_cost_per_hour
}

/// `$` for moving `total_bytes` (decimal gigabytes).
pub fn data_transfer_cost(total_bytes: u64, rates: &CostRates) -> f64 {
    total_bytes as f64 / 1e9 * rates.data_transfer_cost_per_gb
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataCenterCost {
    pub data_center: String,
    pub vm_cost: f64,
    pub data_transfer_cost: f64,
    pub memory_cost: f64,
    pub storage_cost: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub data_centers: Vec<DataCenterCost>,
    pub total_vm_cost: f64,
    pub total_data_transfer_cost: f64,
    pub total_memory_cost: f64,
    pub total_storage_cost: f64,
    pub grand_total: f64,
}

impl CostLedger {
    pub fn from_parts(data_centers: Vec<DataCenterCost>) -> Self {
        let sum = |f: fn(&DataCenterCost) -> f64| data_centers.iter().map(f).sum::<f64>();
        let total_vm_cost = sum(|c| c.vm_cost);
        let total_data_transfer_cost = sum(|c| c.data_transfer_cost);
        let total_memory_cost = sum(|c| c.memory_cost);
        let total_storage_cost = sum(|c| c.storage_cost);
        let grand_total = sum(|c| c.total);
        CostLedger {
            data_centers,
            total_vm_cost,
            total_data_transfer_cost,
            total_memory_cost,
            total_storage_cost,
            grand_total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub scenario: String,
    pub balancer: String,
    pub broker: String,
    pub seed: u64,
    pub duration_hours: f64,
    pub events_processed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Conservation {
    pub batches_generated: u64,
    pub batches_delivered: u64,
    pub batches_in_flight_at_cutoff: u64,
    pub requests_generated: u64,
    pub requests_delivered: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserBaseReport {
    pub name: String,
    pub region: u8,
    pub response: StatAccumulator,
    /// Response times bucketed by send hour.
    pub hourly: HourlyHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataCenterReport {
    pub name: String,
    pub region: u8,
    pub vm_count: u32,
    pub processing: StatAccumulator,
    /// Processing times bucketed by arrival hour; bucket counts are requests served per hour.
    pub hourly: HourlyHistogram,
    pub busy_vm_ms: f64,
    pub bytes_transferred: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub meta: RunMetadata,
    pub overall_response: StatAccumulator,
    pub overall_processing: StatAccumulator,
    pub user_bases: Vec<UserBaseReport>,
    pub data_centers: Vec<DataCenterReport>,
    pub costs: CostLedger,
    pub conservation: Conservation,
}

impl SimulationReport {
    /// Canonical JSON (struct field order, full precision).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Raw per-run accumulation, turned into a [`SimulationReport`] by [`MetricsCollector::summarize`].
#[derive(Debug, Clone)]
pub struct MetricsCollector {
    user_bases: Vec<UserBaseReport>,
    data_centers: Vec<DataCenterReport>,
}

impl MetricsCollector {
    pub fn new(scenario: &ValidatedScenario) -> Self {
        let cfg = scenario.config();
        MetricsCollector {
            user_bases: cfg
                .user_bases
                .iter()
                .map(|ub| UserBaseReport {
                    name: ub.name.clone(),
                    region: ub.region.into(),
                    response: StatAccumulator::default(),
                    hourly: HourlyHistogram::default(),
                })
                .collect(),
            data_centers: cfg
                .data_centers
                .iter()
                .map(|dc| DataCenterReport {
                    name: dc.name.clone(),
                    region: dc.region.into(),
                    vm_count: dc.vm_count,
                    processing: StatAccumulator::default(),
                    hourly: HourlyHistogram::default(),
                    busy_vm_ms: 0.0,
                    bytes_transferred: 0,
                })
                .collect(),
        }
    }

    pub fn record_response(&mut self, ub_id: usize, sent_at: f64, delivered_at: f64, group_size: u64) -> Result<(), MetricsError> {
        let d = delivered_at - sent_at;
        if d < 0.0 {
            return Err(MetricsError::NegativeDuration {
                what: "user base",
                id: ub_id,
                duration: d,
            });
        }
        let ub = &mut self.user_bases[ub_id];
        ub.response.record(d, group_size);
        ub.hourly.record(sent_at, d, group_size);
        Ok(())
    }

    pub fn record_processing(&mut self, dc_id: usize, arrived_dc_at: f64, done_at: f64, group_size: u64) -> Result<(), MetricsError> {
        let d = done_at - arrived_dc_at;
        if d < 0.0 {
            return Err(MetricsError::NegativeDuration {
                what: "data center",
                id: dc_id,
                duration: d,
            });
        }
        let dc = &mut self.data_centers[dc_id];
        dc.processing.record(d, group_size);
        dc.hourly.record(arrived_dc_at, d, group_size);
        Ok(())
    }

    pub fn add_transfer_bytes(&mut self, dc_id: usize, bytes: u64) {
        self.data_centers[dc_id].bytes_transferred += bytes;
    }

    pub fn set_busy_time(&mut self, dc_id: usize, busy_vm_ms: f64) {
        self.data_centers[dc_id].busy_vm_ms = busy_vm_ms;
    }

    pub fn summarize(self, scenario: &ValidatedScenario, meta: RunMetadata, conservation: Conservation) -> SimulationReport {
        let cfg = scenario.config();
        let rates = &cfg.cost_rates;
        let mut overall_response = StatAccumulator::default();
        for ub in &self.user_bases {
            overall_response.merge(&ub.response);
        }
        let mut overall_processing = StatAccumulator::default();
        for dc in &self.data_centers {
            overall_processing.merge(&dc.processing);
        }
        let costs = self
            .data_centers
            .iter()
            .map(|dc| {
                let vm = vm_cost(dc.vm_count as u64, cfg.duration_hours, rates);
                let transfer = data_transfer_cost(dc.bytes_transferred, rates);
                let (memory, storage) = if rates.accrue_memory_storage {
                    (rates.memory_cost * dc.busy_vm_ms / 1e3, rates.storage_cost * dc.vm_count as f64)
                } else {
                    (0.0, 0.0)
                };
                DataCenterCost {
                    data_center: dc.name.clone(),
                    vm_cost: vm,
                    data_transfer_cost: transfer,
                    memory_cost: memory,
                    storage_cost: storage,
                    total: vm + transfer + memory + storage,
                }
            })
            .collect();
        SimulationReport {
            meta,
            overall_response,
            overall_processing,
            user_bases: self.user_bases,
            data_centers: self.data_centers,
            costs: CostLedger::from_parts(costs),
            conservation,
        }
    }
}

/// Two-decimal rendering, rounding half up; empty statistics render as an em dash.
pub fn render_ms(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}", round_half_up_2(v)),
        None => "\u{2014}".to_string(),
    }
}

pub fn round_half_up_2(v: f64) -> f64 {
    // Nudge by a relative epsilon so decimal ties stored just below .5 still round up.
    let scaled = v * 100.0;
    (scaled + scaled.abs() * 1e-12).round() / 100.0
}
