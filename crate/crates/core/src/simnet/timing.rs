//! Per-worker duration sampling. Each worker owns independent RNG streams
//! for compute and communication so draws do not depend on event order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::config::{split_seed, DurationDist, ExperimentConfig, Timestamp};

const COMPUTE_STREAM: u64 = 0xC0;
const COMM_STREAM: u64 = 0xC1;
const START_STREAM: u64 = 0xC2;

/// One draw from `dist`.
pub fn sample(dist: DurationDist, rng: &mut impl Rng) -> f64 {
    match dist {
        DurationDist::Constant(c) => c,
        DurationDist::Uniform { lo, hi } if lo == hi => lo,
        DurationDist::Uniform { lo, hi } => rng.random_range(lo..hi),
        DurationDist::LogNormal { mu, sigma } => {
            LogNormal::new(mu, sigma).expect("validated lognormal parameters").sample(rng)
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkerTiming {
    compute: DurationDist,
    comm: DurationDist,
    compute_rng: ChaCha8Rng,
    comm_rng: ChaCha8Rng,
    /// Offset at which the worker starts its first iteration.
    pub start: Timestamp,
}

impl WorkerTiming {
    pub fn compute_time(&mut self) -> f64 {
        sample(self.compute, &mut self.compute_rng)
    }

    pub fn comm_delay(&mut self) -> f64 {
        sample(self.comm, &mut self.comm_rng)
    }
}

/// Timing state for every worker of `config`.
pub fn worker_timings(config: &ExperimentConfig) -> Vec<WorkerTiming> {
    let t = &config.timing;
    t.compute_dists(config.worker_count)
        .into_iter()
        .enumerate()
        .map(|(i, compute)| {
            let start = if t.start_skew > 0.0 {
                ChaCha8Rng::seed_from_u64(split_seed(config.seed, START_STREAM, i)).random_range(0.0..t.start_skew)
            } else {
                0.0
            };
            WorkerTiming {
                compute,
                comm: t.comm_delay,
                compute_rng: ChaCha8Rng::seed_from_u64(split_seed(config.seed, COMPUTE_STREAM, i)),
                comm_rng: ChaCha8Rng::seed_from_u64(split_seed(config.seed, COMM_STREAM, i)),
                start,
            }
        })
        .collect()
}
