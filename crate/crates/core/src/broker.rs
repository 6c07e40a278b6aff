//! Data-center selection for each user-base request.

use rand::Rng;

use crate::network::DelayMatrix;
use crate::scenario::{BrokerPolicy, Region};

/// Smoothing weight for newly observed response times.
pub const RESPONSE_EWMA_ALPHA: f64 = 0.1;

/// Data center with the smallest mean delay from `ub_region`; ties go to the lowest id.
pub fn closest_dc(ub_region: Region, dc_regions: &[Region], delay: &DelayMatrix) -> usize {
    assert!(!dc_regions.is_empty(), "broker needs at least one data center");
    let mut best = 0;
    for (dc, &r) in dc_regions.iter().enumerate().skip(1) {
        if delay.mean(ub_region, r) < delay.mean(ub_region, dc_regions[best]) {
            best = dc;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Broker {
    policy: BrokerPolicy,
    dc_regions: Vec<Region>,
    last_recorded_response_ms: Vec<Option<f64>>,
}

impl Broker {
    pub fn new(policy: BrokerPolicy, dc_regions: Vec<Region>) -> Self {
        assert!(!dc_regions.is_empty(), "broker needs at least one data center");
        let n = dc_regions.len();
        Broker {
            policy,
            dc_regions,
            last_recorded_response_ms: vec![None; n],
        }
    }

    pub fn policy(&self) -> BrokerPolicy {
        self.policy
    }

    pub fn dc_regions(&self) -> &[Region] {
        &self.dc_regions
    }

    pub fn recorded_response(&self, dc: usize) -> Option<f64> {
        self.last_recorded_response_ms[dc]
    }

    pub fn closest_dc(&self, ub_region: Region, delay: &DelayMatrix) -> usize {
        closest_dc(ub_region, &self.dc_regions, delay)
    }

    /// Response-time estimate for `dc` as seen from `ub_region`: the smoothed history if any,
    /// otherwise the round-trip network delay.
    fn estimate(&self, ub_region: Region, dc: usize, delay: &DelayMatrix) -> f64 {
        self.last_recorded_response_ms[dc].unwrap_or_else(|| 2.0 * delay.mean(ub_region, self.dc_regions[dc]))
    }

    /// Closest DC, unless another DC has a better response estimate, in which case a fair
    /// coin picks between the two. The coin is only drawn when they differ.
    pub fn optimize_response_time<R: Rng + ?Sized>(&self, ub_region: Region, delay: &DelayMatrix, rng: &mut R) -> usize {
        let closest = self.closest_dc(ub_region, delay);
        let mut best = closest;
        for dc in 0..self.dc_regions.len() {
            if self.estimate(ub_region, dc, delay) < self.estimate(ub_region, best, delay) {
                best = dc;
            }
        }
        if best == closest || !rng.gen_bool(0.5) {
            closest
        } else {
            best
        }
    }

    pub fn select<R: Rng + ?Sized>(&self, ub_region: Region, delay: &DelayMatrix, rng: &mut R) -> usize {
        match self.policy {
            BrokerPolicy::ClosestDataCenter => self.closest_dc(ub_region, delay),
            BrokerPolicy::OptimizeResponseTime => self.optimize_response_time(ub_region, delay, rng),
        }
    }

    pub fn record_response(&mut self, dc: usize, response_ms: f64) {
        let slot = &mut self.last_recorded_response_ms[dc];
        *slot = Some(match *slot {
            None => response_ms,
            Some(prev) => prev + RESPONSE_EWMA_ALPHA * (response_ms - prev),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn r(i: u8) -> Region {
        Region::new(i).unwrap()
    }

    #[test]
    fn closest_from_asia() {
        let d = DelayMatrix::default();
        assert_eq!(closest_dc(r(3), &[r(0), r(2)], &d), 1);
        assert_eq!(closest_dc(r(3), &[r(4)], &d), 0);
        assert_eq!(closest_dc(r(1), &[r(2), r(2)], &d), 0);
    }

    #[test]
    fn no_history_means_closest() {
        let d = DelayMatrix::default();
        let b = Broker::new(BrokerPolicy::OptimizeResponseTime, vec![r(0), r(2), r(3), r(5)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for ub in 0..6 {
            assert_eq!(b.select(r(ub), &d, &mut rng), b.closest_dc(r(ub), &d));
        }
    }

    #[test]
    fn closest_and_fastest_is_deterministic() {
        let d = DelayMatrix::default();
        let mut b = Broker::new(BrokerPolicy::OptimizeResponseTime, vec![r(0), r(3)]);
        b.record_response(0, 60.0);
        b.record_response(1, 900.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| b.select(r(0), &d, &mut rng) == 0));
    }

    #[test]
    fn slow_closest_splits_evenly() {
        let d = DelayMatrix::default();
        let mut b = Broker::new(BrokerPolicy::OptimizeResponseTime, vec![r(0), r(3)]);
        b.record_response(0, 500.0);
        b.record_response(1, 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let trials = 10_000;
        let remote = (0..trials).filter(|_| b.select(r(0), &d, &mut rng) == 1).count();
        let frac = remote as f64 / trials as f64;
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn ewma() {
        let mut b = Broker::new(BrokerPolicy::OptimizeResponseTime, vec![r(0)]);
        b.record_response(0, 100.0);
        assert_eq!(b.recorded_response(0), Some(100.0));
        b.record_response(0, 200.0);
        assert!((b.recorded_response(0).unwrap() - 110.0).abs() < 1e-12);
        for _ in 0..500 {
            b.record_response(0, 42.0);
        }
        assert!((b.recorded_response(0).unwrap() - 42.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn closest_is_scale_invariant(scale in 0.01f64..100.0, ub in 0u8..6,
                                      dcs in proptest::collection::vec(0u8..6, 1..6)) {
            let d = DelayMatrix::default();
            let mut scaled = d.clone();
            scaled.0.iter_mut().flatten().for_each(|x| *x *= scale);
            let regions: Vec<_> = dcs.into_iter().map(r).collect();
            prop_assert_eq!(closest_dc(r(ub), &regions, &d), closest_dc(r(ub), &regions, &scaled));
        }

        #[test]
        fn single_dc_always_chosen(ub in 0u8..6, dc in 0u8..6, hist in proptest::option::of(0.0f64..1000.0), seed in any::<u64>()) {
            let d = DelayMatrix::default();
            for policy in BrokerPolicy::ALL {
                let mut b = Broker::new(policy, vec![r(dc)]);
                if let Some(h) = hist { b.record_response(0, h); }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                prop_assert_eq!(b.select(r(ub), &d, &mut rng), 0);
            }
        }

        #[test]
        fn optimize_stays_in_range(ub in 0u8..6, dcs in proptest::collection::vec((0u8..6, proptest::option::of(1.0f64..1000.0)), 1..6), seed in any::<u64>()) {
            let d = DelayMatrix::default();
            let mut b = Broker::new(BrokerPolicy::OptimizeResponseTime, dcs.iter().map(|&(x, _)| r(x)).collect());
            for (i, &(_, h)) in dcs.iter().enumerate() {
                if let Some(h) = h { b.record_response(i, h); }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                prop_assert!(b.select(r(ub), &d, &mut rng) < dcs.len());
            }
        }
    }
}
