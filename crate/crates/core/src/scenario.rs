//! Declarative scenario model: parsing, validation and the built-in experiments.
//!
//! Scenario files are JSON. Every optional field falls back to the reference
//! configuration (six-region delay/bandwidth matrices, $0.1 VM-hour pricing,
//! grouping factors 1000/100, 250 instructions per request).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datacenter::{place_vms, VmPlacement};
use crate::network::{BandwidthMatrix, DelayMatrix, REGION_COUNT};

/// One of the six world regions, `0..=5`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Region(u8);

impl Region {
    pub fn new(index: u8) -> Result<Self, ScenarioError> {
        Self::try_from(index)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<u8> for Region {
    type Error = ScenarioError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        if (value as usize) < REGION_COUNT {
            Ok(Region(value))
        } else {
            Err(ScenarioError::RegionOutOfRange(value))
        }
    }
}

impl From<Region> for u8 {
    fn from(r: Region) -> u8 {
        r.0
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrokerPolicy {
    #[serde(alias = "closest")]
    ClosestDataCenter,
    #[serde(alias = "optimize")]
    OptimizeResponseTime,
}

impl BrokerPolicy {
    pub const ALL: [BrokerPolicy; 2] = [BrokerPolicy::ClosestDataCenter, BrokerPolicy::OptimizeResponseTime];

    /// Short name used on the command line and in output directory names.
    pub fn short_name(self) -> &'static str {
        match self {
            BrokerPolicy::ClosestDataCenter => "closest",
            BrokerPolicy::OptimizeResponseTime => "optimize",
        }
    }
}

impl FromStr for BrokerPolicy {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "closest" | "closest_data_center" => Ok(BrokerPolicy::ClosestDataCenter),
            "optimize" | "optimize_response_time" => Ok(BrokerPolicy::OptimizeResponseTime),
            other => Err(ScenarioError::UnknownPolicy {
                kind: "broker",
                name: other.to_string(),
                valid: "closest, optimize",
            }),
        }
    }
}

impl fmt::Display for BrokerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancerPolicy {
    #[serde(alias = "rr")]
    RoundRobin,
    #[serde(alias = "esce")]
    EquallySpread,
    Throttled,
}

impl BalancerPolicy {
    pub const ALL: [BalancerPolicy; 3] =
        [BalancerPolicy::RoundRobin, BalancerPolicy::EquallySpread, BalancerPolicy::Throttled];

    pub fn short_name(self) -> &'static str {
        match self {
            BalancerPolicy::RoundRobin => "rr",
            BalancerPolicy::EquallySpread => "esce",
            BalancerPolicy::Throttled => "throttled",
        }
    }
}

impl FromStr for BalancerPolicy {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rr" | "round_robin" => Ok(BalancerPolicy::RoundRobin),
            "esce" | "equally_spread" => Ok(BalancerPolicy::EquallySpread),
            "throttled" => Ok(BalancerPolicy::Throttled),
            other => Err(ScenarioError::UnknownPolicy {
                kind: "balancer",
                name: other.to_string(),
                valid: "rr, esce, throttled",
            }),
        }
    }
}

impl fmt::Display for BalancerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VmPolicy {
    #[default]
    #[serde(alias = "TIME_SHARED")]
    TimeShared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    #[serde(default = "defaults::host_memory_mb")]
    pub memory_mb: u64,
    #[serde(default = "defaults::host_storage_mb")]
    pub storage_mb: u64,
    #[serde(default = "defaults::host_bandwidth")]
    pub bandwidth: f64,
    #[serde(default = "defaults::processor_count")]
    pub processor_count: u32,
    #[serde(default = "defaults::processor_mips")]
    pub processor_mips: f64,
    #[serde(default)]
    pub vm_policy: VmPolicy,
}

impl Default for HostSpec {
    fn default() -> Self {
        HostSpec {
            memory_mb: defaults::host_memory_mb(),
            storage_mb: defaults::host_storage_mb(),
            bandwidth: defaults::host_bandwidth(),
            processor_count: defaults::processor_count(),
            processor_mips: defaults::processor_mips(),
            vm_policy: VmPolicy::TimeShared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataCenterSpec {
    pub name: String,
    pub region: Region,
    pub vm_count: u32,
    #[serde(default = "defaults::vm_image_size")]
    pub vm_image_size: u64,
    #[serde(default = "defaults::vm_memory_mb")]
    pub vm_memory_mb: u64,
    #[serde(default = "defaults::vm_bandwidth_mbps")]
    pub vm_bandwidth_mbps: f64,
    /// Optional per-VM MIPS cap. When absent a VM gets its equal share of the host.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vm_mips: Option<f64>,
    #[serde(default = "defaults::hosts")]
    pub hosts: Vec<HostSpec>,
}

impl DataCenterSpec {
    /// A data center with `vm_count` VMs on the two reference hosts.
    pub fn reference(name: &str, region: Region, vm_count: u32) -> Self {
        DataCenterSpec {
            name: name.to_string(),
            region,
            vm_count,
            vm_image_size: defaults::vm_image_size(),
            vm_memory_mb: defaults::vm_memory_mb(),
            vm_bandwidth_mbps: defaults::vm_bandwidth_mbps(),
            vm_mips: None,
            hosts: defaults::hosts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "UserBaseDoc")]
pub struct UserBaseSpec {
    pub name: String,
    pub region: Region,
    pub requests_per_user_per_hour: f64,
    pub request_size_bytes: u64,
    pub response_size_bytes: u64,
    pub peak_start_gmt: u32,
    pub peak_end_gmt: u32,
    pub avg_peak_users: u64,
    pub avg_offpeak_users: u64,
}

impl UserBaseSpec {
    /// A user base with the reference traffic profile (60 req/user/h, 100 B, peak 3-9 GMT) in the given region.
    pub fn reference(name: &str, region: Region) -> Self {
        UserBaseSpec {
            name: name.to_string(),
            region,
            requests_per_user_per_hour: 60.0,
            request_size_bytes: 100,
            response_size_bytes: 100,
            peak_start_gmt: 3,
            peak_end_gmt: 9,
            avg_peak_users: 1000,
            avg_offpeak_users: 100,
        }
    }
}

// Wire form: response size falls back to the request size when omitted.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UserBaseDoc {
    name: String,
    region: Region,
    #[serde(default = "defaults::requests_per_user_per_hour")]
    requests_per_user_per_hour: f64,
    #[serde(default = "defaults::request_size_bytes")]
    request_size_bytes: u64,
    #[serde(default)]
    response_size_bytes: Option<u64>,
    #[serde(default = "defaults::peak_start_gmt")]
    peak_start_gmt: u32,
    #[serde(default = "defaults::peak_end_gmt")]
    peak_end_gmt: u32,
    #[serde(default = "defaults::avg_peak_users")]
    avg_peak_users: u64,
    #[serde(default = "defaults::avg_offpeak_users")]
    avg_offpeak_users: u64,
}

impl From<UserBaseDoc> for UserBaseSpec {
    fn from(d: UserBaseDoc) -> Self {
        UserBaseSpec {
            name: d.name,
            region: d.region,
            requests_per_user_per_hour: d.requests_per_user_per_hour,
            request_size_bytes: d.request_size_bytes,
            response_size_bytes: d.response_size_bytes.unwrap_or(d.request_size_bytes),
            peak_start_gmt: d.peak_start_gmt,
            peak_end_gmt: d.peak_end_gmt,
            avg_peak_users: d.avg_peak_users,
            avg_offpeak_users: d.avg_offpeak_users,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationParams {
    /// Simultaneous users represented by one traffic source.
    #[serde(default = "defaults::user_grouping_factor")]
    pub user_grouping_factor: u64,
    /// User requests batched into one schedulable task.
    #[serde(default = "defaults::request_grouping_factor")]
    pub request_grouping_factor: u64,
    #[serde(default = "defaults::instruction_length_per_request")]
    pub instruction_length_per_request: u64,
}

impl Default for SimulationParams {
    fn default() -> Self {
        SimulationParams {
            user_grouping_factor: defaults::user_grouping_factor(),
            request_grouping_factor: defaults::request_grouping_factor(),
            instruction_length_per_request: defaults::instruction_length_per_request(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostRates {
    #[serde(default = "defaults::vm_cost_per_hour")]
    pub vm_cost_per_hour: f64,
    #[serde(default = "defaults::data_transfer_cost_per_gb")]
    pub data_transfer_cost_per_gb: f64,
    /// Dollars per second of VM busy time; only accrued when `accrue_memory_storage` is set.
    #[serde(default = "defaults::memory_cost")]
    pub memory_cost: f64,
    /// Dollars per deployed VM image; only accrued when `accrue_memory_storage` is set.
    #[serde(default = "defaults::storage_cost")]
    pub storage_cost: f64,
    #[serde(default)]
    pub accrue_memory_storage: bool,
}

impl Default for CostRates {
    fn default() -> Self {
        CostRates {
            vm_cost_per_hour: defaults::vm_cost_per_hour(),
            data_transfer_cost_per_gb: defaults::data_transfer_cost_per_gb(),
            memory_cost: defaults::memory_cost(),
            storage_cost: defaults::storage_cost(),
            accrue_memory_storage: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "defaults::duration_hours")]
    pub duration_hours: f64,
    pub user_bases: Vec<UserBaseSpec>,
    pub data_centers: Vec<DataCenterSpec>,
    #[serde(default = "defaults::broker_policy")]
    pub broker_policy: BrokerPolicy,
    #[serde(default = "defaults::balancer_policy")]
    pub balancer_policy: BalancerPolicy,
    #[serde(default)]
    pub sim_params: SimulationParams,
    #[serde(default)]
    pub cost_rates: CostRates,
    #[serde(default)]
    pub delay_matrix: DelayMatrix,
    #[serde(default)]
    pub bandwidth_matrix: BandwidthMatrix,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn total_vm_count(&self) -> u64 {
        self.data_centers.iter().map(|dc| dc.vm_count as u64).sum()
    }
}

mod defaults {
    use super::*;

    pub fn duration_hours() -> f64 {
        24.0
    }
    pub fn broker_policy() -> BrokerPolicy {
        BrokerPolicy::ClosestDataCenter
    }
    pub fn balancer_policy() -> BalancerPolicy {
        BalancerPolicy::RoundRobin
    }
    pub fn user_grouping_factor() -> u64 {
        1000
    }
    pub fn request_grouping_factor() -> u64 {
        100
    }
    pub fn instruction_length_per_request() -> u64 {
        250
    }
    pub fn vm_cost_per_hour() -> f64 {
        0.1
    }
    pub fn data_transfer_cost_per_gb() -> f64 {
        0.1
    }
    pub fn memory_cost() -> f64 {
        0.05
    }
    pub fn storage_cost() -> f64 {
        0.1
    }
    pub fn requests_per_user_per_hour() -> f64 {
        60.0
    }
    pub fn request_size_bytes() -> u64 {
        100
    }
    pub fn peak_start_gmt() -> u32 {
        3
    }
    pub fn peak_end_gmt() -> u32 {
        9
    }
    pub fn avg_peak_users() -> u64 {
        1000
    }
    pub fn avg_offpeak_users() -> u64 {
        100
    }
    pub fn vm_image_size() -> u64 {
        10_000
    }
    pub fn vm_memory_mb() -> u64 {
        512
    }
    pub fn vm_bandwidth_mbps() -> f64 {
        1000.0
    }
    pub fn host_memory_mb() -> u64 {
        204_800
    }
    pub fn host_storage_mb() -> u64 {
        100_000_000
    }
    pub fn host_bandwidth() -> f64 {
        1_000_000.0
    }
    pub fn processor_count() -> u32 {
        4
    }
    pub fn processor_mips() -> f64 {
        10_000.0
    }
    pub fn hosts() -> Vec<HostSpec> {
        vec![HostSpec::default(), HostSpec::default()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("region out of range: {0} (valid regions are 0..=5)")]
    RegionOutOfRange(u8),
    #[error("unknown {kind} policy `{name}` (valid: {valid})")]
    UnknownPolicy {
        kind: &'static str,
        name: String,
        valid: &'static str,
    },
    #[error("parse error at line {line}, column {column}, field `{path}`: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario:\n{}", format_issues(.0))]
    Invalid(Vec<ValidationIssue>),
    #[error("unknown builtin scenario `{0}` (valid: step1, step2, step2-cost, step3)")]
    UnknownBuiltin(String),
}

fn format_issues(issues: &[ValidationIssue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

/// Parse a JSON scenario document, filling omitted fields with the reference defaults.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let parsed: Result<ScenarioConfig, _> = serde_path_to_error::deserialize(de);
    parsed.map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        ScenarioError::Parse {
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })
}

/// Canonical JSON form of a scenario; `parse_scenario` inverts it.
pub fn serialize_scenario(config: &ScenarioConfig) -> String {
    serde_json::to_string_pretty(config).expect("scenario serialization is infallible")
}

/// A scenario that passed every check; immutable and cheap to clone across threads.
#[derive(Debug, Clone)]
pub struct ValidatedScenario {
    inner: Arc<Validated>,
}

#[derive(Debug)]
struct Validated {
    config: ScenarioConfig,
    placements: Vec<VmPlacement>,
}

impl ValidatedScenario {
    pub fn config(&self) -> &ScenarioConfig {
        &self.inner.config
    }

    /// VM placement for each data center, in configuration order.
    pub fn placements(&self) -> &[VmPlacement] {
        &self.inner.placements
    }

    pub fn duration_ms(&self) -> f64 {
        self.inner.config.duration_hours * crate::traffic::MS_PER_HOUR
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn nonnegative(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

/// Check every scenario invariant, collecting all violations with their field paths.
///
/// User counts and delay entries may be zero (an idle or zero-latency scenario is a valid
/// experiment); everything that divides or scales time must be strictly positive.
pub fn validate(config: ScenarioConfig) -> Result<ValidatedScenario, ScenarioError> {
    let mut issues = Vec::new();
    let mut issue = |path: String, message: &str| {
        issues.push(ValidationIssue {
            path,
            message: message.to_string(),
        })
    };

    if !positive(config.duration_hours) {
        issue("duration_hours".into(), "must be > 0");
    }
    if config.user_bases.is_empty() {
        issue("user_bases".into(), "at least one user base is required");
    }
    if config.data_centers.is_empty() {
        issue("data_centers".into(), "at least one data center is required");
    }

    for (i, ub) in config.user_bases.iter().enumerate() {
        let p = |f: &str| format!("user_bases[{i}].{f}");
        if ub.peak_start_gmt >= ub.peak_end_gmt {
            issue(p("peak_end_gmt"), "peak window empty");
        }
        if ub.peak_end_gmt > 24 {
            issue(p("peak_end_gmt"), "must be <= 24");
        }
        if !positive(ub.requests_per_user_per_hour) {
            issue(p("requests_per_user_per_hour"), "must be > 0");
        }
    }

    for (i, dc) in config.data_centers.iter().enumerate() {
        let p = |f: &str| format!("data_centers[{i}].{f}");
        if dc.vm_count == 0 {
            issue(p("vm_count"), "must be > 0");
        }
        if dc.hosts.is_empty() {
            issue(p("hosts"), "at least one host is required");
        }
        if !positive(dc.vm_bandwidth_mbps) {
            issue(p("vm_bandwidth_mbps"), "must be > 0");
        }
        if let Some(cap) = dc.vm_mips {
            if !positive(cap) {
                issue(p("vm_mips"), "must be > 0");
            }
        }
        for (h, host) in dc.hosts.iter().enumerate() {
            if host.processor_count == 0 {
                issue(format!("data_centers[{i}].hosts[{h}].processor_count"), "must be >= 1");
            }
            if !positive(host.processor_mips) {
                issue(format!("data_centers[{i}].hosts[{h}].processor_mips"), "must be > 0");
            }
        }
    }

    let sp = &config.sim_params;
    for (name, v) in [
        ("user_grouping_factor", sp.user_grouping_factor),
        ("request_grouping_factor", sp.request_grouping_factor),
        ("instruction_length_per_request", sp.instruction_length_per_request),
    ] {
        if v == 0 {
            issue(format!("sim_params.{name}"), "must be > 0");
        }
    }

    let cr = &config.cost_rates;
    for (name, v) in [
        ("vm_cost_per_hour", cr.vm_cost_per_hour),
        ("data_transfer_cost_per_gb", cr.data_transfer_cost_per_gb),
        ("memory_cost", cr.memory_cost),
        ("storage_cost", cr.storage_cost),
    ] {
        if !nonnegative(v) {
            issue(format!("cost_rates.{name}"), "must be >= 0");
        }
    }

    for src in 0..REGION_COUNT {
        for dst in 0..REGION_COUNT {
            if !nonnegative(config.delay_matrix.0[src][dst]) {
                issue(format!("delay_matrix[{src}][{dst}]"), "must be >= 0");
            }
            if !positive(config.bandwidth_matrix.0[src][dst]) {
                issue(format!("bandwidth_matrix[{src}][{dst}]"), "must be > 0");
            }
        }
    }

    // Placement is only meaningful once the per-DC fields above are sane.
    let mut placements = Vec::with_capacity(config.data_centers.len());
    if issues.is_empty() {
        for (i, dc) in config.data_centers.iter().enumerate() {
            match place_vms(dc) {
                Ok(p) => placements.push(p),
                Err(e) => issues.push(ValidationIssue {
                    path: format!("data_centers[{i}]"),
                    message: e.to_string(),
                }),
            }
        }
    }

    if issues.is_empty() {
        Ok(ValidatedScenario {
            inner: Arc::new(Validated { config, placements }),
        })
    } else {
        Err(ScenarioError::Invalid(issues))
    }
}

fn region(i: u8) -> Region {
    Region::new(i).expect("builtin regions are in range")
}

/// The four reference user bases.
///
/// Regions follow the table (UB1=0, UB2=3, UB3=2, UB4=5). The prose places UB1 in region 1,
/// but only the tabulated assignment reproduces the observed per-UB response times, which sit
/// at twice the one-way delay to a region-0 data center.
pub fn reference_user_bases() -> Vec<UserBaseSpec> {
    [("UB1", 0), ("UB2", 3), ("UB3", 2), ("UB4", 5)]
        .into_iter()
        .map(|(name, r)| UserBaseSpec::reference(name, region(r)))
        .collect()
}

fn step(name: &str, dcs: &[(u8, u32)], duration_hours: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        duration_hours,
        user_bases: reference_user_bases(),
        data_centers: dcs
            .iter()
            .enumerate()
            .map(|(i, &(r, vms))| DataCenterSpec::reference(&format!("DC{}", i + 1), region(r), vms))
            .collect(),
        broker_policy: BrokerPolicy::ClosestDataCenter,
        balancer_policy: BalancerPolicy::RoundRobin,
        sim_params: SimulationParams::default(),
        cost_rates: CostRates::default(),
        delay_matrix: DelayMatrix::default(),
        bandwidth_matrix: BandwidthMatrix::default(),
        seed: 0,
    }
}

/// The three infrastructure steps: one, two and four data centers sharing 100 VMs.
///
/// DC1 sits in region 0; further data centers go to the next user-base regions (2, 3, 5).
pub fn builtin_scenarios() -> Vec<ScenarioConfig> {
    vec![
        step("step1", &[(0, 100)], 24.0),
        step("step2", &[(0, 50), (2, 50)], 24.0),
        step("step3", &[(0, 25), (2, 25), (3, 25), (5, 25)], 24.0),
    ]
}

/// Builtin names with one-line descriptions, in listing order.
pub const BUILTIN_NAMES: [(&str, &str); 4] = [
    ("step1", "1 DC / 100 VMs, 24 h, all traffic to a single region-0 data center"),
    ("step2", "2 DCs / 50 VMs each (regions 0, 2), 24 h"),
    ("step2-cost", "2 DCs / 50 VMs each (regions 0, 2), 20 h, the costed two-site variant"),
    ("step3", "4 DCs / 25 VMs each (regions 0, 2, 3, 5), 24 h"),
];

/// Look up a builtin by name, including the 20-hour `step2-cost` variant.
pub fn builtin(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    match name {
        "step2-cost" => Ok(step("step2-cost", &[(0, 50), (2, 50)], 20.0)),
        _ => builtin_scenarios()
            .into_iter()
            .find(|s| s.name == name)
            .ok_or_else(|| ScenarioError::UnknownBuiltin(name.to_string())),
    }
}
