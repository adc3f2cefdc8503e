use std::sync::Arc;

use crate::config::{GradientVector, IterationCount, Timestamp, WeightVector, WorkerId};
use crate::pserver::{ParameterServer, ServerError};
use crate::policy::SyncDecision;

use super::{DataShard, Model};

/// A gradient ready to push, with the bookkeeping the metrics need.
#[derive(Debug, Clone, PartialEq)]
pub struct PushRequest {
    pub gradient: GradientVector,
    /// Mini-batch loss at the local weights the gradient was taken at.
    pub batch_loss: f64,
    /// Server version of those local weights.
    pub based_on: u64,
}

/// Worker-local state: its shard, its copy of the weights and a budget.
#[derive(Debug, Clone)]
pub struct Worker {
    id: WorkerId,
    model: Arc<Model>,
    shard: DataShard,
    local: WeightVector,
    batch_size: usize,
    iteration: IterationCount,
    budget: IterationCount,
}

impl Worker {
    pub fn new(
        id: WorkerId,
        model: Arc<Model>,
        shard: DataShard,
        local: WeightVector,
        batch_size: usize,
        budget: IterationCount,
    ) -> Self {
        Self { id, model, shard, local, batch_size, iteration: 0, budget }
    }

    pub fn id(&self) -> WorkerId {
        self.id
    }

    pub fn local(&self) -> &WeightVector {
        &self.local
    }

    /// Gradients computed so far.
    pub fn iteration(&self) -> IterationCount {
        self.iteration
    }

    pub fn budget(&self) -> IterationCount {
        self.budget
    }

    pub fn epochs(&self) -> u64 {
        self.shard.epoch
    }

    pub fn finished(&self) -> bool {
        self.iteration >= self.budget
    }

    /// Draws the next mini-batch and computes the gradient at the local weights.
    pub fn compute(&mut self) -> PushRequest {
        let batch = self.shard.next_batch(self.batch_size);
        let (batch_loss, values) = self.model.loss_and_gradient(&self.local.values, &batch.examples);
        let gradient = GradientVector { values, source: self.id, source_iter: self.iteration };
        self.iteration += 1;
        PushRequest { gradient, batch_loss, based_on: self.local.version }
    }

    /// Replaces the local weights with a freshly pulled snapshot.
    pub fn install(&mut self, w: WeightVector) {
        self.local = w;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    /// The push was granted and the new weights are installed.
    Granted(SyncDecision),
    /// The worker is parked until a later push releases it.
    Parked(SyncDecision),
}

/// One synchronous compute/push/pull cycle with zero delays.
///
/// Retires the worker at the server once its budget is spent. A parked
/// worker must be resumed by pulling after it appears in some `released`.
pub fn worker_step(worker: &mut Worker, server: &mut ParameterServer, now: Timestamp) -> Result<StepOutcome, ServerError> {
    let req = worker.compute();
    let d = server.handle_push(&req.gradient, now)?;
    if worker.finished() {
        server.retire(worker.id());
    }
    if d.is_grant() {
        worker.install(server.handle_pull(worker.id())?);
        Ok(StepOutcome::Granted(d))
    } else {
        Ok(StepOutcome::Parked(d))
    }
}
