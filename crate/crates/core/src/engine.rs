//! Discrete-event loop wiring traffic, broker, network, balancers and data centers.
//!
//! Events are totally ordered by `(time, seq)`; all randomness comes from one
//! ChaCha stream consumed in that order, so a run is a pure function of its
//! scenario and seed.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::broker::Broker;
use crate::datacenter::{DataCenterError, DataCenterState, Dispatch};
use crate::metrics::{Conservation, MetricsCollector, MetricsError, RunMetadata, SimulationReport};
use crate::network::{InternetModel, NetworkError};
use crate::scenario::ValidatedScenario;
use crate::traffic::{schedule_next_batch, RequestBatch, Request, MS_PER_HOUR};

/// How long after the nominal end in-flight work may keep running.
pub const DRAIN_CAP_MS: f64 = MS_PER_HOUR;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    /// A user base issues its pending batch.
    ScheduleBatch { ub: usize },
    BatchArrivesAtDc { request: usize },
    /// Projected completion on a VM; ignored if the VM's version moved on.
    TaskCompletes { dc: usize, vm: usize, version: u64 },
    ResponseDelivered { request: usize },
    HourBoundary { hour: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time.total_cmp(&other.time).then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Future event list: a min-heap on `(time, seq)` that hands out sequence numbers.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, kind: EventKind) -> Event {
        let ev = Event {
            time,
            seq: self.next_seq,
            kind,
        };
        self.next_seq += 1;
        self.heap.push(Reverse(ev));
        ev
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn peek(&self) -> Option<&Event> {
        self.heap.peek().map(|Reverse(e)| e)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Pending events in pop order.
    pub fn sorted(&self) -> Vec<Event> {
        let mut v: Vec<Event> = self.heap.iter().map(|Reverse(e)| *e).collect();
        v.sort();
        v
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event out of order: {event:?} popped after clock {clock}")]
    EventOutOfOrder { clock: f64, event: Event },
    #[error("event scheduled into the past at {time} (clock {clock}): {kind:?}")]
    ScheduledInPast { clock: f64, time: f64, kind: EventKind },
    #[error("request {0} reached a state it should not be in: {1}")]
    RequestState(usize, &'static str),
    #[error("request {0} has out-of-order timestamps")]
    TimestampOrder(usize),
    #[error("channel load unbalanced after drain")]
    UnbalancedChannelLoad,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    DataCenter(#[from] DataCenterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// One simulation run. Create with [`Engine::new`], then [`Engine::run_to_end`] or drive with [`Engine::step`].
pub struct Engine {
    scenario: ValidatedScenario,
    rng: ChaCha8Rng,
    clock: f64,
    duration_ms: f64,
    queue: EventQueue,
    net: InternetModel,
    broker: Broker,
    dcs: Vec<DataCenterState>,
    /// The batch each user base will issue at its next ScheduleBatch event.
    pending: Vec<Option<RequestBatch>>,
    requests: Vec<Request>,
    metrics: MetricsCollector,
    current_hour: u64,
    events_processed: u64,
    batches_delivered: u64,
    requests_generated: u64,
    requests_delivered: u64,
    generate_traffic: bool,
}

impl Engine {
    pub fn new(scenario: &ValidatedScenario) -> Self {
        let cfg = scenario.config();
        let dcs = cfg
            .data_centers
            .iter()
            .zip(scenario.placements())
            .enumerate()
            .map(|(i, (spec, placement))| DataCenterState::new(i, spec.region, placement, cfg.balancer_policy))
            .collect();
        let mut engine = Engine {
            scenario: scenario.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            clock: 0.0,
            duration_ms: scenario.duration_ms(),
            queue: EventQueue::new(),
            net: InternetModel::new(cfg.delay_matrix.clone(), cfg.bandwidth_matrix.clone()),
            broker: Broker::new(cfg.broker_policy, cfg.data_centers.iter().map(|d| d.region).collect()),
            dcs,
            pending: vec![None; cfg.user_bases.len()],
            requests: Vec::new(),
            metrics: MetricsCollector::new(scenario),
            current_hour: 0,
            events_processed: 0,
            batches_delivered: 0,
            requests_generated: 0,
            requests_delivered: 0,
            generate_traffic: true,
        };
        for ub in 0..cfg.user_bases.len() {
            engine.plan_next_batch(ub, 0.0);
        }
        if MS_PER_HOUR < engine.duration_ms {
            engine.queue.push(MS_PER_HOUR, EventKind::HourBoundary { hour: 1 });
        }
        engine
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn current_hour(&self) -> u64 {
        self.current_hour
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    pub fn data_centers(&self) -> &[DataCenterState] {
        &self.dcs
    }

    pub fn network(&self) -> &InternetModel {
        &self.net
    }

    pub fn pending_events(&self) -> Vec<Event> {
        self.queue.sorted()
    }

    /// Hard stop for the drain phase.
    pub fn cutoff_ms(&self) -> f64 {
        self.duration_ms + DRAIN_CAP_MS
    }

    fn schedule(&mut self, time: f64, kind: EventKind) -> Result<Event, SimError> {
        if time < self.clock || time.is_nan() {
            return Err(SimError::ScheduledInPast {
                clock: self.clock,
                time,
                kind,
            });
        }
        Ok(self.queue.push(time, kind))
    }

    fn plan_next_batch(&mut self, ub: usize, now: f64) {
        if !self.generate_traffic {
            return;
        }
        let cfg = self.scenario.config();
        let spec = &cfg.user_bases[ub];
        if let Some((t, batch)) = schedule_next_batch(spec, ub, &cfg.sim_params, self.duration_ms, now, &mut self.rng) {
            self.pending[ub] = Some(batch);
            self.queue.push(t, EventKind::ScheduleBatch { ub });
        }
    }

    fn schedule_completion(&mut self, dc: usize, vm: usize) -> Result<(), SimError> {
        let state = &self.dcs[dc].vms[vm];
        if let Some(t) = state.next_completion() {
            let version = state.version;
            // Rounding can put the projection a hair behind the clock.
            self.schedule(t.max(self.clock), EventKind::TaskCompletes { dc, vm, version })?;
        }
        Ok(())
    }

    fn task_demand(&self, group_size: u64) -> f64 {
        (group_size * self.scenario.config().sim_params.instruction_length_per_request) as f64
    }

    /// Process the next event. Returns `None` when the queue is empty.
    pub fn step(&mut self) -> Result<Option<Event>, SimError> {
        let Some(event) = self.queue.pop() else {
            return Ok(None);
        };
        if event.time < self.clock {
            return Err(SimError::EventOutOfOrder { clock: self.clock, event });
        }
        self.clock = event.time;
        self.events_processed += 1;
        let now = event.time;

        match event.kind {
            EventKind::ScheduleBatch { ub } => {
                let batch = self.pending[ub].take().ok_or(SimError::RequestState(usize::MAX, "batch without payload"))?;
                let cfg = self.scenario.config();
                let spec = &cfg.user_bases[ub];
                let dc = self.broker.select(spec.region, self.net.delay(), &mut self.rng);
                let (src, dst) = (spec.region, self.dcs[dc].region);
                let mut request = Request::new(batch, spec.response_size_bytes);
                request.dc = Some(dc);
                self.requests_generated += request.batch.group_size;
                let id = self.requests.len();
                self.net.begin_transfer(src, dst);
                let t = self.net.transfer_time(src, dst, request.uplink_bytes, &mut self.rng);
                self.requests.push(request);
                self.schedule(now + t, EventKind::BatchArrivesAtDc { request: id })?;
                self.plan_next_batch(ub, now);
            }
            EventKind::BatchArrivesAtDc { request } => {
                let (ub, dc, group) = {
                    let r = &self.requests[request];
                    (r.batch.ub_id, r.dc.ok_or(SimError::RequestState(request, "arrived without a dc"))?, r.batch.group_size)
                };
                let src = self.scenario.config().user_bases[ub].region;
                self.net.end_transfer(src, self.dcs[dc].region)?;
                self.requests[request].arrived_dc_at = Some(now);
                let demand = self.task_demand(group);
                match self.dcs[dc].dispatch(request, demand, now)? {
                    Dispatch::Assigned { vm } => {
                        self.requests[request].vm = Some(vm);
                        self.requests[request].started_at = Some(now);
                        self.schedule_completion(dc, vm)?;
                    }
                    Dispatch::Queued => {}
                }
            }
            EventKind::TaskCompletes { dc, vm, version } => {
                if self.dcs[dc].vms[vm].version == version {
                    let outcome = self.dcs[dc].complete(vm, now)?;
                    for &task in &outcome.finished {
                        self.finish_processing(task, dc, now)?;
                    }
                    let mut touched = vec![vm];
                    for &(task, target) in &outcome.dequeued {
                        self.requests[task].vm = Some(target);
                        self.requests[task].started_at = Some(now);
                        if !touched.contains(&target) {
                            touched.push(target);
                        }
                    }
                    for target in touched {
                        self.schedule_completion(dc, target)?;
                    }
                }
            }
            EventKind::ResponseDelivered { request } => {
                let (ub, dc) = {
                    let r = &self.requests[request];
                    (r.batch.ub_id, r.dc.ok_or(SimError::RequestState(request, "delivered without a dc"))?)
                };
                let ub_region = self.scenario.config().user_bases[ub].region;
                self.net.end_transfer(self.dcs[dc].region, ub_region)?;
                let r = &mut self.requests[request];
                if r.delivered_at.is_some() {
                    return Err(SimError::RequestState(request, "delivered twice"));
                }
                r.delivered_at = Some(now);
                if !r.timestamps_ordered() {
                    return Err(SimError::TimestampOrder(request));
                }
                let (sent, group, bytes) = (r.sent_at, r.batch.group_size, r.uplink_bytes + r.downlink_bytes);
                self.metrics.record_response(ub, sent, now, group)?;
                self.metrics.add_transfer_bytes(dc, bytes);
                self.broker.record_response(dc, now - sent);
                self.batches_delivered += 1;
                self.requests_delivered += group;
            }
            EventKind::HourBoundary { hour } => {
                self.current_hour = hour;
                let next = (hour + 1) as f64 * MS_PER_HOUR;
                if next < self.duration_ms {
                    self.schedule(next, EventKind::HourBoundary { hour: hour + 1 })?;
                }
            }
        }
        Ok(Some(event))
    }

    fn finish_processing(&mut self, task: usize, dc: usize, now: f64) -> Result<(), SimError> {
        let r = &mut self.requests[task];
        let arrived = r.arrived_dc_at.ok_or(SimError::RequestState(task, "processed before arrival"))?;
        r.processing_done_at = Some(now);
        let (ub, group, down) = (r.batch.ub_id, r.batch.group_size, r.downlink_bytes);
        self.metrics.record_processing(dc, arrived, now, group)?;
        let ub_region = self.scenario.config().user_bases[ub].region;
        let dc_region = self.dcs[dc].region;
        self.net.begin_transfer(dc_region, ub_region);
        let t = self.net.transfer_time(dc_region, ub_region, down, &mut self.rng);
        self.schedule(now + t, EventKind::ResponseDelivered { request: task })?;
        Ok(())
    }

    /// Run until the queue drains or the drain cap is reached, then summarize.
    pub fn run_to_end(mut self) -> Result<SimulationReport, SimError> {
        let cutoff = self.cutoff_ms();
        while let Some(ev) = self.queue.peek() {
            if ev.time > cutoff {
                break;
            }
            self.step()?;
        }
        self.finish()
    }

    /// Summarize the current state into a report.
    pub fn finish(mut self) -> Result<SimulationReport, SimError> {
        let generated = self.requests.len() as u64;
        let in_flight = generated - self.batches_delivered;
        if in_flight == 0 && !self.net.load().is_idle() {
            return Err(SimError::UnbalancedChannelLoad);
        }
        for (i, dc) in self.dcs.iter().enumerate() {
            let busy: f64 = dc.vms.iter().map(|v| v.cumulative_busy_ms).sum();
            self.metrics.set_busy_time(i, busy);
        }
        let cfg = self.scenario.config();
        let meta = RunMetadata {
            scenario: cfg.name.clone(),
            balancer: cfg.balancer_policy.short_name().to_string(),
            broker: cfg.broker_policy.short_name().to_string(),
            seed: cfg.seed,
            duration_hours: cfg.duration_hours,
            events_processed: self.events_processed,
        };
        let conservation = Conservation {
            batches_generated: generated,
            batches_delivered: self.batches_delivered,
            batches_in_flight_at_cutoff: in_flight,
            requests_generated: self.requests_generated,
            requests_delivered: self.requests_delivered,
        };
        Ok(self.metrics.summarize(&self.scenario, meta, conservation))
    }
}

/// Simulate a validated scenario to completion.
pub fn run(scenario: &ValidatedScenario) -> Result<SimulationReport, SimError> {
    Engine::new(scenario).run_to_end()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{BandwidthMatrix, DelayMatrix};
    use crate::scenario::{
        builtin, validate, BalancerPolicy, DataCenterSpec, HostSpec, Region, ScenarioConfig, UserBaseSpec,
    };

    fn r0() -> Region {
        Region::new(0).unwrap()
    }

    fn tiny(vms: u32, balancer: BalancerPolicy) -> ScenarioConfig {
        let mut ub = UserBaseSpec::reference("UB1", r0());
        ub.request_size_bytes = 0;
        ub.response_size_bytes = 0;
        ScenarioConfig {
            name: "tiny".into(),
            duration_hours: 1.0,
            user_bases: vec![ub; 3],
            data_centers: vec![DataCenterSpec {
                hosts: vec![HostSpec {
                    processor_count: 1,
                    processor_mips: 1.0, // 1000 instructions per ms
                    ..HostSpec::default()
                }],
                ..DataCenterSpec::reference("DC1", r0(), vms)
            }],
            broker_policy: crate::scenario::BrokerPolicy::ClosestDataCenter,
            balancer_policy: balancer,
            sim_params: Default::default(),
            cost_rates: Default::default(),
            delay_matrix: DelayMatrix([[0.0; 6]; 6]),
            bandwidth_matrix: BandwidthMatrix::default(),
            seed: 0,
        }
    }

    /// Engine with no generated traffic; batches are injected by hand.
    fn quiet_engine(cfg: ScenarioConfig) -> Engine {
        let scenario = validate(cfg).unwrap();
        let mut e = Engine::new(&scenario);
        e.queue = EventQueue::new();
        e.pending = vec![None; 3];
        e.generate_traffic = false;
        e
    }

    fn inject(e: &mut Engine, ub: usize, time: f64, group_size: u64) {
        e.pending[ub] = Some(RequestBatch {
            ub_id: ub,
            created_at: time,
            user_count: 1,
            request_size_bytes: 0,
            group_size,
        });
        e.queue.push(time, EventKind::ScheduleBatch { ub });
    }

    fn drain(e: &mut Engine) {
        while e.step().unwrap().is_some() {}
    }

    #[test]
    fn queue_orders_by_time_then_seq() {
        let mut q = EventQueue::new();
        q.push(5.0, EventKind::HourBoundary { hour: 1 });
        q.push(1.0, EventKind::HourBoundary { hour: 2 });
        q.push(5.0, EventKind::HourBoundary { hour: 3 });
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.kind).collect();
        assert_eq!(
            order,
            vec![
                EventKind::HourBoundary { hour: 2 },
                EventKind::HourBoundary { hour: 1 },
                EventKind::HourBoundary { hour: 3 }
            ]
        );
    }

    #[test]
    fn single_batch_response_equals_service_time() {
        let mut e = quiet_engine(tiny(1, BalancerPolicy::RoundRobin));
        inject(&mut e, 0, 10.0, 100);
        drain(&mut e);
        let r = &e.requests()[0];
        // 100 requests x 250 instructions at 1000 instructions/ms
        assert_eq!(r.delivered_at.unwrap() - r.sent_at, 25.0);
        assert_eq!(r.processing_done_at.unwrap() - r.arrived_dc_at.unwrap(), 25.0);
    }

    #[test]
    fn throttled_dequeue_happens_at_completion_time() {
        let mut e = quiet_engine(tiny(2, BalancerPolicy::Throttled));
        for ub in 0..3 {
            inject(&mut e, ub, 0.0, 100);
        }
        // three batches, two VMs
        for _ in 0..3 {
            e.step().unwrap();
        }
        for _ in 0..3 {
            e.step().unwrap(); // arrivals
        }
        assert_eq!(e.data_centers()[0].waiting_queue.len(), 1);
        assert_eq!(e.requests()[2].started_at, None);

        let completion = loop {
            let ev = e.step().unwrap().unwrap();
            if matches!(ev.kind, EventKind::TaskCompletes { .. }) {
                break ev;
            }
        };
        // two VMs share one 1-MIPS host: 25,000 instructions take 50 ms each
        assert_eq!(completion.time, 50.0);
        assert!(e.data_centers()[0].waiting_queue.is_empty());
        assert_eq!(e.requests()[2].started_at, Some(50.0));
        let vm = e.requests()[2].vm.unwrap();
        let next = e
            .pending_events()
            .into_iter()
            .find(|ev| matches!(ev.kind, EventKind::TaskCompletes { vm: v, .. } if v == vm) && ev.seq > completion.seq)
            .expect("dequeued task has a completion scheduled");
        assert!(next.time >= completion.time);
        assert_eq!(next.time, 100.0);
        drain(&mut e);
        assert!(e.requests().iter().all(|r| r.delivered_at.is_some()));
    }

    #[test]
    fn balancer_invoked_once_per_arrival() {
        let mut e = quiet_engine(tiny(3, BalancerPolicy::RoundRobin));
        inject(&mut e, 0, 0.0, 1);
        e.step().unwrap();
        e.step().unwrap();
        match e.data_centers()[0].balancer() {
            crate::balancer::Balancer::RoundRobin(rr) => assert_eq!(rr.cursor(), 1),
            _ => unreachable!(),
        }
    }

    #[test]
    fn hour_boundaries_track_the_clock() {
        let scenario = validate(builtin("step1").unwrap()).unwrap();
        let mut e = Engine::new(&scenario);
        while e.clock() < 4.5 * MS_PER_HOUR {
            let ev = e.step().unwrap().unwrap();
            if let EventKind::HourBoundary { hour } = ev.kind {
                assert_eq!(ev.time, hour as f64 * MS_PER_HOUR);
            }
        }
        assert_eq!(e.current_hour(), 4);
    }

    #[test]
    fn scheduling_into_the_past_is_rejected() {
        let mut e = quiet_engine(tiny(1, BalancerPolicy::RoundRobin));
        e.clock = 100.0;
        assert!(matches!(e.schedule(50.0, EventKind::HourBoundary { hour: 0 }), Err(SimError::ScheduledInPast { .. })));
    }

    #[test]
    fn zero_users_run_is_empty() {
        let mut cfg = builtin("step1").unwrap();
        for ub in &mut cfg.user_bases {
            ub.avg_peak_users = 0;
            ub.avg_offpeak_users = 0;
        }
        let report = run(&validate(cfg).unwrap()).unwrap();
        assert_eq!(report.overall_response.count, 0);
        assert_eq!(report.overall_response.mean_ms(), None);
        assert_eq!(report.conservation.batches_generated, 0);
    }

    #[test]
    fn clock_is_monotone_and_timestamps_ordered() {
        let mut cfg = builtin("step2").unwrap();
        cfg.duration_hours = 2.0;
        cfg.balancer_policy = BalancerPolicy::Throttled;
        let scenario = validate(cfg).unwrap();
        let mut e = Engine::new(&scenario);
        let mut last = 0.0;
        while let Some(ev) = e.step().unwrap() {
            assert!(ev.time >= last);
            last = ev.time;
        }
        assert!(e.requests().iter().all(|r| r.timestamps_ordered() && r.delivered_at.is_some()));
        assert!(e.network().load().is_idle());
    }
}
