use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Added completion delay of one rank's window operations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Delay {
    Zero,
    Fixed(Duration),
    /// Uniform in `[lo, hi]`.
    Uniform(Duration, Duration),
}

impl Delay {
    pub fn fixed_ms(ms: f64) -> Self {
        Delay::Fixed(Duration::from_secs_f64(ms * 1e-3))
    }

    pub fn uniform_ms(lo: f64, hi: f64) -> Self {
        Delay::Uniform(Duration::from_secs_f64(lo * 1e-3), Duration::from_secs_f64(hi * 1e-3))
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Delay::Zero => true,
            Delay::Fixed(d) => d.is_zero(),
            Delay::Uniform(lo, hi) => lo.is_zero() && hi.is_zero(),
        }
    }
}

/// Seeded per-rank delay distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyModel {
    pub seed: u64,
    pub default: Delay,
    /// Overrides by rank.
    pub per_rank: Vec<(usize, Delay)>,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::zero()
    }
}

impl LatencyModel {
    pub fn zero() -> Self {
        LatencyModel {
            seed: 0,
            default: Delay::Zero,
            per_rank: Vec::new(),
        }
    }

    pub fn uniform(delay: Delay, seed: u64) -> Self {
        LatencyModel {
            seed,
            default: delay,
            per_rank: Vec::new(),
        }
    }

    pub fn with_rank(mut self, rank: usize, delay: Delay) -> Self {
        self.per_rank.retain(|(r, _)| *r != rank);
        self.per_rank.push((rank, delay));
        self
    }

    pub fn delay_of(&self, rank: usize) -> Delay {
        self.per_rank
            .iter()
            .find(|(r, _)| *r == rank)
            .map_or(self.default, |(_, d)| *d)
    }
}

/// Sampling state: one independent stream per rank.
#[derive(Debug)]
pub(crate) struct LatencySampler {
    model: LatencyModel,
    streams: Vec<Mutex<ChaCha8Rng>>,
}

impl LatencySampler {
    pub(crate) fn new(model: LatencyModel, num_ranks: usize) -> Self {
        let streams = (0..num_ranks)
            .map(|r| Mutex::new(ChaCha8Rng::seed_from_u64(model.seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))))
            .collect();
        LatencySampler { model, streams }
    }

    pub(crate) fn model(&self) -> &LatencyModel {
        &self.model
    }

    pub(crate) fn sample(&self, rank: usize) -> Duration {
        match self.model.delay_of(rank) {
            Delay::Zero => Duration::ZERO,
            Delay::Fixed(d) => d,
            Delay::Uniform(lo, hi) => {
                if hi <= lo {
                    return lo;
                }
                let mut rng = self.streams[rank].lock().unwrap();
                let s = rng.gen_range(lo.as_secs_f64()..=hi.as_secs_f64());
                Duration::from_secs_f64(s)
            }
        }
    }
}
