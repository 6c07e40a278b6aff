//! VM selection policies inside a data center.
//!
//! Ties are always broken towards the lowest VM id.

use thiserror::Error;

use crate::scenario::BalancerPolicy;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BalancerError {
    #[error("completion on vm {0} which has no allocation")]
    Underflow(usize),
    #[error("completion on vm {0} which is not busy")]
    NotBusy(usize),
    #[error("vm {0} out of range")]
    UnknownVm(usize),
}

/// Cyclic assignment; never refuses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundRobin {
    cursor: usize,
    vm_count: usize,
}

impl RoundRobin {
    pub fn new(vm_count: usize) -> Self {
        assert!(vm_count > 0, "round robin needs at least one vm");
        RoundRobin { cursor: 0, vm_count }
    }

    pub fn next_vm(&mut self) -> usize {
        let vm = self.cursor;
        self.cursor = (self.cursor + 1) % self.vm_count;
        vm
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }
}

/// Equally Spread Current Execution: pick the VM with the fewest tasks allocated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquallySpread {
    allocations: Vec<u32>,
}

impl EquallySpread {
    pub fn new(vm_count: usize) -> Self {
        assert!(vm_count > 0, "equally spread needs at least one vm");
        EquallySpread {
            allocations: vec![0; vm_count],
        }
    }

    pub fn from_counts(allocations: Vec<u32>) -> Self {
        assert!(!allocations.is_empty());
        EquallySpread { allocations }
    }

    pub fn next_vm(&mut self) -> usize {
        // min_by_key returns the first minimum, i.e. the lowest id.
        let (vm, _) = self
            .allocations
            .iter()
            .enumerate()
            .min_by_key(|&(_, &c)| c)
            .expect("non-empty");
        self.allocations[vm] += 1;
        vm
    }

    pub fn allocation_count(&self, vm: usize) -> u32 {
        self.allocations[vm]
    }

    pub fn allocations(&self) -> &[u32] {
        &self.allocations
    }

    fn release(&mut self, vm: usize) -> Result<(), BalancerError> {
        let c = self.allocations.get_mut(vm).ok_or(BalancerError::UnknownVm(vm))?;
        if *c == 0 {
            return Err(BalancerError::Underflow(vm));
        }
        *c -= 1;
        Ok(())
    }
}

/// At most one active task per VM; refuses when every VM is busy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Throttled {
    available: Vec<bool>,
}

impl Throttled {
    pub fn new(vm_count: usize) -> Self {
        assert!(vm_count > 0, "throttled needs at least one vm");
        Throttled {
            available: vec![true; vm_count],
        }
    }

    pub fn from_availability(available: Vec<bool>) -> Self {
        assert!(!available.is_empty());
        Throttled { available }
    }

    pub fn next_vm(&mut self) -> Option<usize> {
        let vm = self.available.iter().position(|&a| a)?;
        self.available[vm] = false;
        Some(vm)
    }

    pub fn is_available(&self, vm: usize) -> bool {
        self.available[vm]
    }

    fn release(&mut self, vm: usize) -> Result<(), BalancerError> {
        let a = self.available.get_mut(vm).ok_or(BalancerError::UnknownVm(vm))?;
        if *a {
            return Err(BalancerError::NotBusy(vm));
        }
        *a = true;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Balancer {
    RoundRobin(RoundRobin),
    EquallySpread(EquallySpread),
    Throttled(Throttled),
}

impl Balancer {
    pub fn new(policy: BalancerPolicy, vm_count: usize) -> Self {
        match policy {
            BalancerPolicy::RoundRobin => Balancer::RoundRobin(RoundRobin::new(vm_count)),
            BalancerPolicy::EquallySpread => Balancer::EquallySpread(EquallySpread::new(vm_count)),
            BalancerPolicy::Throttled => Balancer::Throttled(Throttled::new(vm_count)),
        }
    }

    pub fn policy(&self) -> BalancerPolicy {
        match self {
            Balancer::RoundRobin(_) => BalancerPolicy::RoundRobin,
            Balancer::EquallySpread(_) => BalancerPolicy::EquallySpread,
            Balancer::Throttled(_) => BalancerPolicy::Throttled,
        }
    }

    /// VM for the next task, or `None` when the task must wait (Throttled only).
    pub fn select(&mut self) -> Option<usize> {
        match self {
            Balancer::RoundRobin(rr) => Some(rr.next_vm()),
            Balancer::EquallySpread(es) => Some(es.next_vm()),
            Balancer::Throttled(th) => th.next_vm(),
        }
    }

    pub fn notify_complete(&mut self, vm: usize) -> Result<(), BalancerError> {
        match self {
            Balancer::RoundRobin(_) => Ok(()),
            Balancer::EquallySpread(es) => es.release(vm),
            Balancer::Throttled(th) => th.release(vm),
        }
    }
}
