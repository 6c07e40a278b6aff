//! Inter-region network: Poisson latency per message plus a serialization term
//! over bandwidth shared equally among concurrent transfers on the same
//! ordered region pair.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::Region;

pub const REGION_COUNT: usize = 6;

/// Mean one-way latency between regions, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DelayMatrix(pub [[f64; REGION_COUNT]; REGION_COUNT]);

impl Default for DelayMatrix {
    fn default() -> Self {
        DelayMatrix([
            [25.0, 100.0, 150.0, 250.0, 250.0, 100.0],
            [100.0, 25.0, 250.0, 500.0, 350.0, 200.0],
            [150.0, 250.0, 25.0, 150.0, 150.0, 200.0],
            [250.0, 500.0, 150.0, 25.0, 500.0, 500.0],
            [250.0, 350.0, 150.0, 500.0, 25.0, 500.0],
            [100.0, 200.0, 200.0, 500.0, 500.0, 25.0],
        ])
    }
}

impl DelayMatrix {
    pub fn mean(&self, src: Region, dst: Region) -> f64 {
        self.0[src.index()][dst.index()]
    }
}

/// Available bandwidth between regions, in Mbps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BandwidthMatrix(pub [[f64; REGION_COUNT]; REGION_COUNT]);

impl Default for BandwidthMatrix {
    fn default() -> Self {
        let mut m = [[1000.0; REGION_COUNT]; REGION_COUNT];
        for (r, bw) in [2000.0, 800.0, 2500.0, 1500.0, 500.0, 2000.0].into_iter().enumerate() {
            m[r][r] = bw;
        }
        BandwidthMatrix(m)
    }
}

impl BandwidthMatrix {
    pub fn capacity_mbps(&self, src: Region, dst: Region) -> f64 {
        self.0[src.index()][dst.index()]
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetworkError {
    #[error("transfer on ({src}, {dst}) ended without a matching begin")]
    UnmatchedEnd { src: Region, dst: Region },
}

/// Number of in-flight transfers per ordered region pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChannelLoad {
    counts: [[u32; REGION_COUNT]; REGION_COUNT],
}

impl ChannelLoad {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn concurrent(&self, src: Region, dst: Region) -> u32 {
        self.counts[src.index()][dst.index()]
    }

    pub fn begin_transfer(&mut self, src: Region, dst: Region) {
        self.counts[src.index()][dst.index()] += 1;
    }

    pub fn end_transfer(&mut self, src: Region, dst: Region) -> Result<(), NetworkError> {
        let c = &mut self.counts[src.index()][dst.index()];
        if *c == 0 {
            return Err(NetworkError::UnmatchedEnd { src, dst });
        }
        *c -= 1;
        Ok(())
    }

    pub fn is_idle(&self) -> bool {
        self.counts.iter().flatten().all(|&c| c == 0)
    }
}

/// Milliseconds to push `size_bytes` through a pipe of `capacity_mbps` shared by `concurrent` transfers.
pub fn serialization_ms(size_bytes: u64, capacity_mbps: f64, concurrent: u32) -> f64 {
    let share_bps = capacity_mbps * 1e6 / concurrent.max(1) as f64;
    size_bytes as f64 * 8.0 / share_bps * 1e3
}

/// Delay and bandwidth matrices plus the live channel load of one run.
#[derive(Debug, Clone)]
pub struct InternetModel {
    delay: DelayMatrix,
    bandwidth: BandwidthMatrix,
    // None where the mean is zero: those pairs always deliver instantly.
    latency: Vec<Option<Poisson<f64>>>,
    load: ChannelLoad,
}

impl InternetModel {
    pub fn new(delay: DelayMatrix, bandwidth: BandwidthMatrix) -> Self {
        let latency = delay
            .0
            .iter()
            .flatten()
            .map(|&mean| if mean > 0.0 { Poisson::new(mean).ok() } else { None })
            .collect();
        InternetModel {
            delay,
            bandwidth,
            latency,
            load: ChannelLoad::new(),
        }
    }

    pub fn delay(&self) -> &DelayMatrix {
        &self.delay
    }

    pub fn bandwidth(&self) -> &BandwidthMatrix {
        &self.bandwidth
    }

    pub fn load(&self) -> &ChannelLoad {
        &self.load
    }

    /// Integer-millisecond latency draw, Poisson around the configured mean.
    pub fn sample_latency<R: Rng + ?Sized>(&self, src: Region, dst: Region, rng: &mut R) -> f64 {
        match &self.latency[src.index() * REGION_COUNT + dst.index()] {
            Some(dist) => dist.sample(rng),
            None => 0.0,
        }
    }

    pub fn begin_transfer(&mut self, src: Region, dst: Region) {
        self.load.begin_transfer(src, dst);
    }

    pub fn end_transfer(&mut self, src: Region, dst: Region) -> Result<(), NetworkError> {
        self.load.end_transfer(src, dst)
    }

    /// Latency draw plus serialization at the current fair share of the pair's bandwidth.
    /// The transfer must already be registered with `begin_transfer`.
    pub fn transfer_time<R: Rng + ?Sized>(&self, src: Region, dst: Region, size_bytes: u64, rng: &mut R) -> f64 {
        let latency = self.sample_latency(src, dst, rng);
        latency
            + serialization_ms(
                size_bytes,
                self.bandwidth.capacity_mbps(src, dst),
                self.load.concurrent(src, dst),
            )
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

    fn model() -> InternetModel {
        InternetModel::new(DelayMatrix::default(), BandwidthMatrix::default())
    }

    #[test]
    fn default_matrices() {
        let d = DelayMatrix::default();
        assert_eq!(d.mean(r(3), r(0)), 250.0);
        assert_eq!(d.mean(r(0), r(1)), 100.0);
        for i in 0..REGION_COUNT {
            assert_eq!(d.0[i][i], 25.0);
            for j in 0..REGION_COUNT {
                assert_eq!(d.0[i][j], d.0[j][i]);
            }
        }
        let b = BandwidthMatrix::default();
        assert_eq!(b.capacity_mbps(r(2), r(2)), 2500.0);
        assert_eq!(b.capacity_mbps(r(4), r(4)), 500.0);
        assert_eq!(b.capacity_mbps(r(1), r(1)), 800.0);
        assert_eq!(b.capacity_mbps(r(2), r(3)), 1000.0);
    }

    #[test]
    fn intra_region_latency_mean() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mean = (0..n).map(|_| m.sample_latency(r(0), r(0), &mut rng)).sum::<f64>() / n as f64;
        assert!((24.5..=25.5).contains(&mean), "{mean}");
    }

    #[test]
    fn every_pair_converges_to_its_mean() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 20_000;
        for s in 0..6 {
            for d in 0..6 {
                let mu = m.delay().mean(r(s), r(d));
                let got = (0..n).map(|_| m.sample_latency(r(s), r(d), &mut rng)).sum::<f64>() / n as f64;
                let tol = 3.0 * mu.sqrt() / (n as f64).sqrt();
                assert!((got - mu).abs() <= tol, "({s},{d}) mean {got} vs {mu}");
            }
        }
    }

    #[test]
    fn draws_are_nonnegative_integers() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = m.sample_latency(r(3), r(5), &mut rng);
            assert!(x >= 0.0 && x.fract() == 0.0);
        }
    }

    #[test]
    fn equal_means_give_identical_draws_across_pairs() {
        let m = InternetModel::new(DelayMatrix([[40.0; 6]; 6]), BandwidthMatrix::default());
        let draws = |s, d| {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            (0..50).map(|_| m.sample_latency(r(s), r(d), &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draws(0, 3), draws(5, 1));
        assert_eq!(draws(2, 2), draws(4, 0));
    }

    #[test]
    fn zero_mean_is_instant() {
        let m = InternetModel::new(DelayMatrix([[0.0; 6]; 6]), BandwidthMatrix::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(m.sample_latency(r(1), r(4), &mut rng), 0.0);
    }

    #[test]
    fn serialization_term() {
        assert_eq!(serialization_ms(0, 1000.0, 1), 0.0);
        assert!((serialization_ms(100, 1000.0, 1) - 0.0008).abs() < 1e-15);
        assert!((serialization_ms(100, 1000.0, 1000) - 0.8).abs() < 1e-12);
        // zero registered transfers is treated as one
        assert_eq!(serialization_ms(100, 1000.0, 0), serialization_ms(100, 1000.0, 1));
    }

    #[test]
    fn zero_size_transfer_is_latency_only() {
        let mut m = model();
        m.begin_transfer(r(0), r(3));
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(m.transfer_time(r(0), r(3), 0, &mut a), m.sample_latency(r(0), r(3), &mut b));
    }

    #[test]
    fn transfer_time_uses_registered_concurrency() {
        let mut m = InternetModel::new(DelayMatrix([[0.0; 6]; 6]), BandwidthMatrix([[1000.0; 6]; 6]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            m.begin_transfer(r(0), r(1));
        }
        assert!((m.transfer_time(r(0), r(1), 100, &mut rng) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn channel_counting() {
        let mut load = ChannelLoad::new();
        assert!(load.is_idle());
        load.begin_transfer(r(0), r(3));
        load.begin_transfer(r(0), r(3));
        load.end_transfer(r(0), r(3)).unwrap();
        assert_eq!(load.concurrent(r(0), r(3)), 1);
        assert_eq!(load.concurrent(r(3), r(0)), 0);
        assert_eq!(
            load.end_transfer(r(3), r(0)),
            Err(NetworkError::UnmatchedEnd { src: r(3), dst: r(0) })
        );
    }

    proptest! {
        #[test]
        fn balanced_sequences_end_idle(ops in proptest::collection::vec((0u8..6, 0u8..6, any::<bool>()), 0..200)) {
            // Build a balanced sequence: every begin is followed later by its end, interleaved.
            let mut load = ChannelLoad::new();
            let mut open: Vec<(u8, u8)> = Vec::new();
            for (s, d, close) in ops {
                if close && !open.is_empty() {
                    let (s, d) = open.remove(0);
                    load.end_transfer(r(s), r(d)).unwrap();
                } else {
                    open.push((s, d));
                    load.begin_transfer(r(s), r(d));
                }
            }
            for (s, d) in open.drain(..) {
                load.end_transfer(r(s), r(d)).unwrap();
            }
            prop_assert!(load.is_idle());
        }

        #[test]
        fn transfer_time_monotone(size in 0u64..10_000_000, extra in 0u64..10_000_000,
                                  conc in 1u32..500, more in 0u32..500, seed in any::<u64>()) {
            let mut small = model();
            let mut big = model();
            for _ in 0..conc { small.begin_transfer(r(2), r(5)); }
            for _ in 0..conc + more { big.begin_transfer(r(2), r(5)); }
            let t = |m: &InternetModel, sz| m.transfer_time(r(2), r(5), sz, &mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert!(t(&small, size) <= t(&small, size + extra));
            prop_assert!(t(&small, size) <= t(&big, size));
        }

        #[test]
        fn latency_draws_below_mean_occur(seed in any::<u64>()) {
            // A region-0 round trip averages 50 ms but can come in under it.
            let m = model();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let min = (0..500)
                .map(|_| m.sample_latency(r(0), r(0), &mut rng) + m.sample_latency(r(0), r(0), &mut rng))
                .fold(f64::INFINITY, f64::min);
            prop_assert!(min < 50.0);
        }
    }
}
