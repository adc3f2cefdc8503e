//! Training side: models, synthetic data, and the worker loop body.

mod data;
mod model;
mod worker;

use std::sync::Arc;

use crate::config::{ExperimentConfig, GradientVector, IterationCount, ModelKind, WeightVector, WorkerId};
use crate::pserver::initial_weights;

pub use data::{make_dataset, partition, DataShard, DataSpec, Dataset, Example, MiniBatch};
pub use model::{Model, LOGIT_CLAMP};
pub use worker::{worker_step, PushRequest, StepOutcome, Worker};

/// Mini-batch gradient of `model` at `w`, tagged with its origin.
pub fn compute_gradient(
    model: &Model,
    w: &WeightVector,
    batch: &MiniBatch,
    source: WorkerId,
    source_iter: IterationCount,
) -> GradientVector {
    let (_, values) = model.loss_and_gradient(&w.values, &batch.examples);
    GradientVector { values, source, source_iter }
}

/// Everything a run trains on, derived deterministically from the config.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: Arc<Model>,
    pub dataset: Arc<Dataset>,
    pub shards: Vec<DataShard>,
    pub initial: WeightVector,
}

impl Problem {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        let dataset = make_dataset(DataSpec {
            kind: config.model_kind,
            size: config.dataset_size,
            input_dim: config.dimension,
            hidden: config.hidden_units,
            noise: config.noise,
            seed: config.seed,
        });
        let model = match config.model_kind {
            ModelKind::QuadraticBowl => Model::quadratic_bowl(dataset.truth.clone()),
            ModelKind::LinearRegression => Model::linear_regression(config.dimension),
            ModelKind::LogisticRegression => Model::logistic_regression(config.dimension),
            ModelKind::TinyMlp => Model::tiny_mlp(config.dimension, config.hidden_units),
        };
        let shards = partition(&dataset, config.worker_count, config.seed);
        let initial = initial_weights(model.dimension(), config.seed);
        Self { model: Arc::new(model), dataset: Arc::new(dataset), shards, initial }
    }

    /// Full-dataset loss at `w`.
    pub fn full_loss(&self, w: &[f64]) -> f64 {
        self.model.loss(w, &self.dataset.examples)
    }

    /// One worker per shard, each starting from the initial weights with a
    /// budget of `epochs` passes over its shard.
    pub fn workers(&self, config: &ExperimentConfig) -> Vec<Worker> {
        self.shards
            .iter()
            .map(|s| {
                let budget = s.iterations_for(config.epochs, config.batch_size);
                Worker::new(s.owner, self.model.clone(), s.clone(), self.initial.clone(), config.batch_size, budget)
            })
            .collect()
    }
}
