//! Deterministic discrete-event simulator for geo-distributed cloud workloads.
//!
//! User bases in six world regions issue grouped requests on a diurnal
//! schedule. A service broker routes each batch to a data center, a VM load
//! balancer picks the VM, and VMs serve their tasks under processor sharing.
//! The run produces response/processing statistics, hourly histograms and a
//! cost ledger.
//!
//! ```no_run
//! use nimbus_core::{engine, scenario};
//!
//! let cfg = scenario::builtin("step1").unwrap();
//! let report = engine::run(&scenario::validate(cfg).unwrap()).unwrap();
//! println!("{:?}", report.overall_response.mean_ms());
//! ```

pub mod balancer;
pub mod broker;
pub mod datacenter;
pub mod engine;
pub mod metrics;
pub mod network;
pub mod scenario;
pub mod traffic;

pub use engine::{run, Engine, SimError};
pub use metrics::SimulationReport;
pub use scenario::{
    builtin, builtin_scenarios, parse_scenario, serialize_scenario, validate, BalancerPolicy, BrokerPolicy,
    ScenarioConfig, ScenarioError, ValidatedScenario,
};
