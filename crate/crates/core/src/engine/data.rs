//! Synthetic datasets, shard partitioning and mini-batch cursors.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{split_seed, ModelKind, WorkerId};

use super::model::{dot, sigmoid};

const DATA_STREAM: u64 = 0xDA7A;
const SHUFFLE_STREAM: u64 = 0x5A0F;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    /// Hidden generating parameters (true weights, bowl centre, or teacher
    /// network), when the kind has them.
    pub truth: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Parameters controlling synthetic data generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataSpec {
    pub kind: ModelKind,
    pub size: usize,
    pub input_dim: usize,
    pub hidden: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Generates a dataset with known ground truth, deterministic per seed.
///
/// * bowl: `size` placeholder examples with empty features; `truth` is the
///   centre, uniform in `[-1, 1]`.
/// * linear: `x ~ N(0, I)`, `y = w*·x + noise·N(0, 1)`.
/// * logistic: `x ~ N(0, I)`, `y ~ Bernoulli(σ(w*·x))`.
/// * mlp: `x ~ N(0, I)`, `y = teacher(x) + noise·N(0, 1)`.
pub fn make_dataset(spec: DataSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(spec.seed, DATA_STREAM, 0));
    let d = spec.input_dim;
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    match spec.kind {
        ModelKind::QuadraticBowl => {
            let truth = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let examples = (0..spec.size).map(|_| Example { x: Vec::new(), y: 0.0 }).collect();
            Dataset { examples, truth }
        }
        ModelKind::LinearRegression | ModelKind::LogisticRegression => {
            let truth: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            let examples = (0..spec.size)
                .map(|_| {
                    let x: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
                    let z = dot(&truth, &x);
                    let y = if spec.kind == ModelKind::LinearRegression {
                        z + spec.noise * normal(&mut rng)
                    } else if rng.random::<f64>() < sigmoid(z) {
                        1.0
                    } else {
                        0.0
                    };
                    Example { x, y }
                })
                .collect();
            Dataset { examples, truth }
        }
        ModelKind::TinyMlp => {
            let h = spec.hidden;
            let teacher = super::Model::tiny_mlp(d, h);
            let scale = 1.0 / (d as f64).sqrt();
            let truth: Vec<f64> = (0..teacher.dimension()).map(|_| scale * normal(&mut rng)).collect();
            let examples = (0..spec.size)
                .map(|_| {
                    let x: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
                    let y = teacher.predict(&truth, &x) + spec.noise * normal(&mut rng);
                    Example { x, y }
                })
                .collect();
            Dataset { examples, truth }
        }
    }
}

/// One worker's contiguous slice of the (once-shuffled) dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DataShard {
    pub owner: WorkerId,
    pub examples: Vec<Example>,
    pub cursor: usize,
    /// Completed passes over the shard.
    pub epoch: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub examples: Vec<Example>,
}

impl DataShard {
    pub fn new(owner: WorkerId, examples: Vec<Example>) -> Self {
        Self { owner, examples, cursor: 0, epoch: 0 }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Takes `m` examples from the cursor, wrapping at the end of the shard.
    /// Every wrap (including landing exactly on the end) completes an epoch.
    pub fn next_batch(&mut self, m: usize) -> MiniBatch {
        let n = self.examples.len();
        assert!(n > 0, "next_batch on an empty shard");
        let mut examples = Vec::with_capacity(m);
        for _ in 0..m {
            examples.push(self.examples[self.cursor].clone());
            self.cursor += 1;
            if self.cursor == n {
                self.cursor = 0;
                self.epoch += 1;
            }
        }
        MiniBatch { examples }
    }

    /// Mini-batches needed to traverse the shard `epochs` times.
    pub fn iterations_for(&self, epochs: u64, m: usize) -> u64 {
        (epochs * self.examples.len() as u64).div_ceil(m as u64)
    }
}

/// Shuffles the dataset once and splits it into `workers` contiguous shards
/// whose sizes differ by at most one.
pub fn partition(dataset: &Dataset, workers: usize, seed: u64) -> Vec<DataShard> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed(seed, SHUFFLE_STREAM, 0)));
    let base = dataset.len() / workers;
    let extra = dataset.len() % workers;
    let mut start = 0;
    (0..workers)
        .map(|w| {
            let len = base + usize::from(w < extra);
            let examples = order[start..start + len].iter().map(|&i| dataset.examples[i].clone()).collect();
            start += len;
            DataShard::new(WorkerId(w), examples)
        })
        .collect()
}
