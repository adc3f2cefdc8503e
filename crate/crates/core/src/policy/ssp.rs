use crate::config::{Timestamp, WorkerId};

use super::{Gate, GrantPath, IterationClockTable, Outcome, PolicyError, SyncDecision, SyncPolicy};

/// Stale synchronous parallel with a fixed threshold.
///
/// A push is granted iff the pusher is at most `threshold` pushes ahead of
/// the slowest worker. Parked workers are re-checked on every push.
#[derive(Debug, Clone)]
pub struct Ssp {
    gate: Gate,
    threshold: u64,
}

impl Ssp {
    pub fn new(workers: usize, threshold: u64) -> Self {
        Self { gate: Gate::new(workers), threshold }
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }
}

impl SyncPolicy for Ssp {
    fn name(&self) -> &'static str {
        "ssp"
    }

    fn on_push(&mut self, p: WorkerId, _now: Timestamp) -> Result<SyncDecision, PolicyError> {
        self.gate.admit(p)?;
        let outcome = if self.gate.lead(p) <= self.threshold {
            Outcome::Grant
        } else {
            self.gate.park(p);
            Outcome::Defer
        };
        let released = self.gate.release_within(self.threshold);
        Ok(SyncDecision { outcome, path: GrantPath::Rule, released })
    }

    fn retire(&mut self, p: WorkerId) -> Vec<WorkerId> {
        self.gate.retire(p);
        self.gate.release_within(self.threshold)
    }

    fn clocks(&self) -> &IterationClockTable {
        &self.gate.clocks
    }

    fn is_deferred(&self, p: WorkerId) -> bool {
        self.gate.is_parked(p)
    }

    fn deferred(&self) -> Vec<WorkerId> {
        self.gate.parked()
    }
}
