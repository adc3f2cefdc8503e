use crate::config::{Timestamp, WorkerId};

use super::{Gate, GrantPath, IterationClockTable, Outcome, PolicyError, SyncDecision, SyncPolicy};

/// Bulk synchronous parallel: a barrier at the end of every iteration.
///
/// A push is granted only when it completes the round, i.e. every active
/// worker has pushed as many times as the pusher. The completing push
/// releases everyone parked at the barrier.
#[derive(Debug, Clone)]
pub struct Bsp {
    gate: Gate,
}

impl Bsp {
    pub fn new(workers: usize) -> Self {
        Self { gate: Gate::new(workers) }
    }
}

impl SyncPolicy for Bsp {
    fn name(&self) -> &'static str {
        "bsp"
    }

    fn on_push(&mut self, p: WorkerId, _now: Timestamp) -> Result<SyncDecision, PolicyError> {
        self.gate.admit(p)?;
        let outcome = if self.gate.lead(p) == 0 {
            Outcome::Grant
        } else {
            self.gate.park(p);
            Outcome::Defer
        };
        let released = self.gate.release_within(0);
        Ok(SyncDecision { outcome, path: GrantPath::Rule, released })
    }

    fn retire(&mut self, p: WorkerId) -> Vec<WorkerId> {
        self.gate.retire(p);
        self.gate.release_within(0)
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
