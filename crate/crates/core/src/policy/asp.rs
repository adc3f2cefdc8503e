use crate::config::{Timestamp, WorkerId};

use super::{Gate, GrantPath, IterationClockTable, Outcome, PolicyError, SyncDecision, SyncPolicy};

/// Asynchronous parallel: every push is granted immediately.
#[derive(Debug, Clone)]
pub struct Asp {
    gate: Gate,
}

impl Asp {
    pub fn new(workers: usize) -> Self {
        Self { gate: Gate::new(workers) }
    }
}

impl SyncPolicy for Asp {
    fn name(&self) -> &'static str {
        "asp"
    }

    fn on_push(&mut self, p: WorkerId, _now: Timestamp) -> Result<SyncDecision, PolicyError> {
        self.gate.admit(p)?;
        Ok(SyncDecision { outcome: Outcome::Grant, path: GrantPath::Rule, released: Vec::new() })
    }

    fn retire(&mut self, p: WorkerId) -> Vec<WorkerId> {
        self.gate.retire(p);
        Vec::new()
    }

    fn clocks(&self) -> &IterationClockTable {
        &self.gate.clocks
    }

    fn is_deferred(&self, _p: WorkerId) -> bool {
        false
    }

    fn deferred(&self) -> Vec<WorkerId> {
        Vec::new()
    }
}
