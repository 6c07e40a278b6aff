//! Engine-wide invariants over randomly generated scenarios, including
//! heavily loaded ones where tasks share VMs and throttled queues build up.

use nimbus_core::engine::Engine;
use nimbus_core::scenario::{DataCenterSpec, Region, UserBaseSpec};
use nimbus_core::{builtin, parse_scenario, serialize_scenario, validate, BalancerPolicy, BrokerPolicy, ScenarioConfig};
use proptest::prelude::*;

fn user_base() -> impl Strategy<Value = UserBaseSpec> {
    (0u8..6, 1.0f64..120.0, 0u64..20_000, 0u32..24, 1u32..24, 0u64..60, 0u64..60).prop_map(
        |(region, rate, size, start, len, peak, off)| {
            let mut u = UserBaseSpec::reference("UB", Region::new(region).unwrap());
            u.requests_per_user_per_hour = rate;
            u.request_size_bytes = size;
            u.response_size_bytes = size / 2;
            u.peak_start_gmt = start;
            u.peak_end_gmt = (start + len).min(24);
            u.avg_peak_users = peak;
            u.avg_offpeak_users = off;
            u
        },
    )
}

fn data_center() -> impl Strategy<Value = DataCenterSpec> {
    (0u8..6, 1u32..6, proptest::option::of(0.05f64..50.0)).prop_map(|(region, vms, cap)| {
        let mut d = DataCenterSpec::reference("DC", Region::new(region).unwrap(), vms);
        d.vm_mips = cap;
        d
    })
}

fn scenario() -> impl Strategy<Value = ScenarioConfig> {
    (
        proptest::collection::vec(user_base(), 1..4),
        proptest::collection::vec(data_center(), 1..4),
        0.02f64..0.4,
        1u64..20,
        100u64..50_000,
        0usize..3,
        0usize..2,
        any::<u64>(),
    )
        .prop_map(|(ubs, dcs, hours, group, instr, b, k, seed)| {
            let mut c = builtin("step1").unwrap();
            c.name = "fuzz".into();
            c.user_bases = ubs.into_iter().enumerate().map(|(i, mut u)| {
                u.name = format!("UB{}", i + 1);
                u
            }).collect();
            c.data_centers = dcs.into_iter().enumerate().map(|(i, mut d)| {
                d.name = format!("DC{}", i + 1);
                d
            }).collect();
            c.duration_hours = hours;
            c.sim_params.request_grouping_factor = group;
            c.sim_params.instruction_length_per_request = instr;
            c.balancer_policy = BalancerPolicy::ALL[b];
            c.broker_policy = BrokerPolicy::ALL[k];
            c.seed = seed;
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn scenario_round_trips(cfg in scenario()) {
        let text = serialize_scenario(&cfg);
        prop_assert_eq!(parse_scenario(&text).unwrap(), cfg);
    }

    #[test]
    fn engine_invariants_hold(cfg in scenario()) {
        let scenario = validate(cfg).unwrap();
        let mut engine = Engine::new(&scenario);
        let cutoff = engine.cutoff_ms();
        let mut last = 0.0;
        while engine.pending_events().first().is_some_and(|e| e.time <= cutoff) {
            let ev = engine.step().unwrap().unwrap();
            prop_assert!(ev.time >= last, "clock went backwards");
            last = ev.time;
            for dc in engine.data_centers() {
                if matches!(dc.balancer(), nimbus_core::balancer::Balancer::Throttled(_)) {
                    prop_assert!(dc.vms.iter().all(|v| v.active_count() <= 1));
                }
                for vm in 0..dc.vms.len() {
                    dc.check_vm(vm).unwrap();
                }
            }
        }
        prop_assert!(engine.requests().iter().all(|r| r.timestamps_ordered()));
        let report = engine.finish().unwrap();

        let c = &report.conservation;
        prop_assert_eq!(c.batches_generated, c.batches_delivered + c.batches_in_flight_at_cutoff);
        prop_assert!(c.requests_delivered <= c.requests_generated);
        prop_assert_eq!(report.overall_response.count, c.requests_delivered);
        for u in &report.user_bases {
            prop_assert_eq!(u.hourly.total_count(), u.response.count);
        }
        for d in &report.data_centers {
            prop_assert_eq!(d.hourly.total_count(), d.processing.count);
        }
        let by_ub: u64 = report.user_bases.iter().map(|u| u.response.count).sum();
        prop_assert_eq!(by_ub, c.requests_delivered);
        let rerun = nimbus_core::run(&scenario).unwrap();
        prop_assert_eq!(rerun.to_json(), report.to_json());
    }
}

/// One region-0 DC with two 1-instruction/ms VMs fed one 1000-instruction task per second
/// on average: tasks overlap under processor sharing and queue under throttling.
fn contended(balancer: BalancerPolicy) -> ScenarioConfig {
    let mut c = builtin("step1").unwrap();
    c.name = "contended".into();
    c.duration_hours = 0.5;
    c.user_bases.truncate(1);
    let u = &mut c.user_bases[0];
    u.avg_peak_users = 60;
    u.avg_offpeak_users = 60;
    c.data_centers[0].vm_count = 2;
    c.data_centers[0].vm_mips = Some(0.001);
    c.sim_params.request_grouping_factor = 1;
    c.sim_params.instruction_length_per_request = 1000;
    c.balancer_policy = balancer;
    c
}

#[test]
fn contention_stretches_processing_times() {
    let solo_ms = 1000.0;
    for balancer in BalancerPolicy::ALL {
        let report = nimbus_core::run(&validate(contended(balancer)).unwrap()).unwrap();
        let p = &report.data_centers[0].processing;
        let c = &report.conservation;
        assert!(p.count > 1500, "{balancer}: {}", p.count);
        assert!(p.min_ms.unwrap() >= solo_ms * (1.0 - 1e-9), "{balancer}: min {:?}", p.min_ms);
        assert!(p.mean_ms().unwrap() > solo_ms * 1.05, "{balancer}: mean {:?}", p.mean_ms());
        assert_eq!(c.batches_generated, c.batches_delivered + c.batches_in_flight_at_cutoff);
        assert_eq!(c.batches_in_flight_at_cutoff, 0, "{balancer}");
        // busy time is bounded by two VMs' worth of clock, and under throttling each task runs alone
        let busy = report.data_centers[0].busy_vm_ms;
        assert!(busy <= 2.0 * (0.5 + 1.0) * 3.6e6, "{balancer}: {busy}");
        if balancer == BalancerPolicy::Throttled {
            let solo_total = p.count as f64 * solo_ms;
            assert!((busy - solo_total).abs() <= 1e-6 * solo_total, "{busy} vs {solo_total}");
        }
    }
}
