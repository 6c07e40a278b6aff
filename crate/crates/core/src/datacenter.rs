//! VM placement and time-shared execution inside a data center.
//!
//! Each VM runs its tasks under exact processor sharing: with `n` active tasks every
//! task progresses at `mips / n`. The VM keeps a single "attained service" counter
//! (instructions delivered to each task since the VM was created); a task admitted at
//! attained level `a` with demand `d` finishes when the counter reaches `a + d`. That
//! makes admit/complete O(n) with no per-task rate bookkeeping.

use std::collections::VecDeque;

use thiserror::Error;

use crate::balancer::{Balancer, BalancerError};
use crate::scenario::{BalancerPolicy, DataCenterSpec, Region};

/// Relative slack when deciding that a task's remaining work has reached zero.
const COMPLETION_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PlacementError {
    #[error("no hosts to place VMs on")]
    NoHosts,
    #[error("host {host} {resource} exhausted: {required} required, {available} available")]
    Capacity {
        host: usize,
        resource: &'static str,
        required: f64,
        available: f64,
    },
    #[error("aggregate memory exhausted: {required} MB required, {available} MB available")]
    AggregateMemory { required: u64, available: u64 },
}

/// Where each VM lives and the capacity it ends up with.
#[derive(Debug, Clone, PartialEq)]
pub struct VmPlacement {
    pub host_of_vm: Vec<usize>,
    /// Effective MIPS per VM.
    pub vm_mips: Vec<f64>,
}

/// Round-robin VMs over hosts; each VM gets an equal share of its host's total MIPS.
pub fn place_vms(spec: &DataCenterSpec) -> Result<VmPlacement, PlacementError> {
    if spec.hosts.is_empty() {
        return Err(PlacementError::NoHosts);
    }
    let vm_count = spec.vm_count as usize;
    let required = spec.vm_memory_mb * spec.vm_count as u64;
    let available: u64 = spec.hosts.iter().map(|h| h.memory_mb).sum();
    if required > available {
        return Err(PlacementError::AggregateMemory { required, available });
    }

    let host_of_vm: Vec<usize> = (0..vm_count).map(|v| v % spec.hosts.len()).collect();
    let mut per_host = vec![0u64; spec.hosts.len()];
    for &h in &host_of_vm {
        per_host[h] += 1;
    }

    for (h, (host, &n)) in spec.hosts.iter().zip(&per_host).enumerate() {
        let checks = [
            ("memory", (spec.vm_memory_mb * n) as f64, host.memory_mb as f64),
            ("storage", (spec.vm_image_size * n) as f64, host.storage_mb as f64),
            ("bandwidth", spec.vm_bandwidth_mbps * n as f64, host.bandwidth),
        ];
        for (resource, required, available) in checks {
            if required > available {
                return Err(PlacementError::Capacity {
                    host: h,
                    resource,
                    required,
                    available,
                });
            }
        }
    }

    let vm_mips = host_of_vm
        .iter()
        .map(|&h| {
            let host = &spec.hosts[h];
            let share = host.processor_mips * host.processor_count as f64 / per_host[h] as f64;
            let share = share.max(f64::MIN_POSITIVE);
            spec.vm_mips.map_or(share, |cap| cap.min(share))
        })
        .collect();

    Ok(VmPlacement { host_of_vm, vm_mips })
}

#[derive(Debug, Error, PartialEq)]
pub enum DataCenterError {
    #[error("negative remaining work {remaining} on dc {dc} vm {vm} for task {task}")]
    NegativeRemainingWork { dc: usize, vm: usize, task: usize, remaining: f64 },
    #[error("completion fired on dc {dc} vm {vm} with no active tasks")]
    NothingToComplete { dc: usize, vm: usize },
    #[error("balancer state diverged from vm {vm} on dc {dc}: {detail}")]
    BalancerDrift { dc: usize, vm: usize, detail: String },
    #[error(transparent)]
    Balancer(#[from] BalancerError),
}

#[derive(Debug, Clone, PartialEq)]
struct ActiveTask {
    task: usize,
    demand: f64,
    /// Attained-service level at which the task is done.
    finish_level: f64,
}

/// Runtime state of one VM.
#[derive(Debug, Clone)]
pub struct VmState {
    pub vm_id: usize,
    /// Capacity in millions of instructions per second.
    pub mips: f64,
    active: Vec<ActiveTask>,
    attained: f64,
    last_update: f64,
    pub cumulative_busy_ms: f64,
    /// Bumped whenever projected completions change; stale completion events carry an old value.
    pub version: u64,
}

impl VmState {
    pub fn new(vm_id: usize, mips: f64) -> Self {
        VmState {
            vm_id,
            mips,
            active: Vec::new(),
            attained: 0.0,
            last_update: 0.0,
            cumulative_busy_ms: 0.0,
            version: 0,
        }
    }

    /// Instructions per millisecond.
    pub fn rate_per_ms(&self) -> f64 {
        self.mips * 1e3
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn is_idle(&self) -> bool {
        self.active.is_empty()
    }

    /// Current share of the VM each active task receives, in instructions per ms.
    pub fn per_task_rate(&self) -> f64 {
        if self.active.is_empty() {
            0.0
        } else {
            self.rate_per_ms() / self.active.len() as f64
        }
    }

    /// `(task, remaining_instructions)` for every active task, as of the last update.
    pub fn active_tasks(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.active.iter().map(|t| (t.task, t.finish_level - self.attained))
    }

    fn advance(&mut self, now: f64) {
        let dt = now - self.last_update;
        if dt > 0.0 && !self.active.is_empty() {
            self.attained += dt * self.rate_per_ms() / self.active.len() as f64;
            self.cumulative_busy_ms += dt;
        }
        self.last_update = self.last_update.max(now);
    }

    /// Start serving `task` with `demand` instructions at `now`.
    pub fn admit(&mut self, task: usize, demand: f64, now: f64) {
        self.advance(now);
        self.active.push(ActiveTask {
            task,
            demand,
            finish_level: self.attained + demand,
        });
        self.version += 1;
    }

    /// Projected time of the next completion under the current task set.
    pub fn next_completion(&self) -> Option<f64> {
        let min_level = self.active.iter().map(|t| t.finish_level).min_by(f64::total_cmp)?;
        let remaining = (min_level - self.attained).max(0.0);
        Some(self.last_update + remaining * self.active.len() as f64 / self.rate_per_ms())
    }

    /// Advance to `now` and remove every task whose work is done. Returns the finished tasks.
    pub fn complete_due(&mut self, now: f64) -> Vec<usize> {
        self.advance(now);
        let Some(min_level) = self.active.iter().map(|t| t.finish_level).min_by(f64::total_cmp) else {
            return Vec::new();
        };
        // The earliest task is due by construction; anything within rounding of it finishes too.
        let cutoff = min_level.max(self.attained);
        let mut done = Vec::new();
        self.active.retain(|t| {
            let due = t.finish_level <= cutoff + COMPLETION_EPS * t.demand.max(1.0);
            if due {
                done.push(t.task);
            }
            !due
        });
        // Snap the counter so survivors' remaining work is measured from the completion point.
        self.attained = cutoff;
        self.version += 1;
        done
    }

    fn min_remaining(&self) -> Option<(usize, f64)> {
        self.active_tasks().min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// A task waiting for a VM (only the Throttled balancer ever refuses one).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueuedTask {
    pub task: usize,
    pub demand: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dispatch {
    Assigned { vm: usize },
    Queued,
}

/// Outcome of a VM completion event.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompletionOutcome {
    pub finished: Vec<usize>,
    /// Tasks pulled off the waiting queue and admitted, with their VM.
    pub dequeued: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct DataCenterState {
    pub dc_id: usize,
    pub region: Region,
    pub vms: Vec<VmState>,
    pub waiting_queue: VecDeque<QueuedTask>,
    balancer: Balancer,
}

impl DataCenterState {
    pub fn new(dc_id: usize, region: Region, placement: &VmPlacement, policy: BalancerPolicy) -> Self {
        let vms: Vec<VmState> = placement
            .vm_mips
            .iter()
            .enumerate()
            .map(|(i, &mips)| VmState::new(i, mips))
            .collect();
        let balancer = Balancer::new(policy, vms.len());
        DataCenterState {
            dc_id,
            region,
            vms,
            waiting_queue: VecDeque::new(),
            balancer,
        }
    }

    pub fn balancer(&self) -> &Balancer {
        &self.balancer
    }

    /// Ask the balancer for a VM; admit there, or queue FIFO when none is assignable.
    pub fn dispatch(&mut self, task: usize, demand: f64, now: f64) -> Result<Dispatch, DataCenterError> {
        match self.balancer.select() {
            Some(vm) => {
                self.vms[vm].admit(task, demand, now);
                self.check_vm(vm)?;
                Ok(Dispatch::Assigned { vm })
            }
            None => {
                self.waiting_queue.push_back(QueuedTask { task, demand });
                Ok(Dispatch::Queued)
            }
        }
    }

    /// Finish every due task on `vm` at `now`, release balancer capacity and drain the queue head(s).
    pub fn complete(&mut self, vm: usize, now: f64) -> Result<CompletionOutcome, DataCenterError> {
        let finished = self.vms[vm].complete_due(now);
        if finished.is_empty() {
            return Err(DataCenterError::NothingToComplete { dc: self.dc_id, vm });
        }
        if let Some((task, remaining)) = self.vms[vm].min_remaining() {
            if remaining < 0.0 {
                return Err(DataCenterError::NegativeRemainingWork {
                    dc: self.dc_id,
                    vm,
                    task,
                    remaining,
                });
            }
        }
        for _ in &finished {
            self.balancer.notify_complete(vm)?;
        }
        self.check_vm(vm)?;

        let mut dequeued = Vec::new();
        while let Some(head) = self.waiting_queue.front().copied() {
            match self.balancer.select() {
                Some(target) => {
                    self.waiting_queue.pop_front();
                    self.vms[target].admit(head.task, head.demand, now);
                    self.check_vm(target)?;
                    dequeued.push((head.task, target));
                }
                None => break,
            }
        }
        Ok(CompletionOutcome { finished, dequeued })
    }

    /// Balancer bookkeeping must mirror the VM's actual task set.
    pub fn check_vm(&self, vm: usize) -> Result<(), DataCenterError> {
        let active = self.vms[vm].active_count();
        let drift = |detail: String| DataCenterError::BalancerDrift {
            dc: self.dc_id,
            vm,
            detail,
        };
        match &self.balancer {
            Balancer::EquallySpread(es) => {
                let count = es.allocation_count(vm) as usize;
                if count != active {
                    return Err(drift(format!("allocation count {count} vs {active} active tasks")));
                }
            }
            Balancer::Throttled(th) => {
                if th.is_available(vm) != (active == 0) || active > 1 {
                    return Err(drift(format!("availability {} with {active} active tasks", th.is_available(vm))));
                }
            }
            Balancer::RoundRobin(_) => {}
        }
        Ok(())
    }
}
