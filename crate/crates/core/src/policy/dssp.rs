use crate::config::{StalenessRange, Timestamp, WorkerId};

use super::controller::synchronization_controller;
use super::{
    CreditTable, Gate, GrantPath, IterationClockTable, Outcome, PolicyError, PushHistoryTable, SyncDecision,
    SyncPolicy,
};

/// Dynamic stale synchronous parallel.
///
/// Branch order for a push from `p`:
///
/// 1. `p` holds credits: spend one and grant.
/// 2. `p` is within `s_lower` of the slowest worker: grant.
/// 3. `p` is the fastest worker: ask the controller for `r*` extra
///    iterations. `r* > 0` stores the credits and grants; otherwise defer.
/// 4. Defer.
///
/// Parked workers are released once they are back within `s_lower`.
///
/// The controller's search range shrinks with the pusher's current lead so
/// that no grant ever happens more than `s_lower + r_max` pushes ahead of the
/// slowest worker. Without that cap, back-to-back credit runs would let the
/// lead grow without limit.
#[derive(Debug, Clone)]
pub struct Dssp {
    gate: Gate,
    range: StalenessRange,
    credits: CreditTable,
    history: PushHistoryTable,
}

impl Dssp {
    pub fn new(workers: usize, range: StalenessRange) -> Self {
        Self {
            gate: Gate::new(workers),
            range,
            credits: CreditTable::new(workers),
            history: PushHistoryTable::new(workers),
        }
    }

    pub fn range(&self) -> StalenessRange {
        self.range
    }

    pub fn history(&self) -> &PushHistoryTable {
        &self.history
    }

    fn decide(&mut self, p: WorkerId, now: Timestamp) -> (Outcome, GrantPath) {
        if self.credits.take(p) {
            self.history.record(p, now);
            return (Outcome::Grant, GrantPath::Credit);
        }
        let lead = self.gate.lead(p);
        if lead <= self.range.s_lower {
            self.history.record(p, now);
            return (Outcome::Grant, GrantPath::Rule);
        }
        if !self.gate.clocks.is_fastest(p) {
            self.history.record(p, now);
            self.gate.park(p);
            return (Outcome::Defer, GrantPath::Rule);
        }
        let headroom = self.range.upper().saturating_sub(lead);
        let horizon = self.range.r_max.min(headroom);
        let r = synchronization_controller(&mut self.history, p, now, &self.gate.clocks, horizon);
        if r > 0 {
            self.credits.set(p, r);
            (Outcome::Grant, GrantPath::Minted(r))
        } else {
            self.gate.park(p);
            (Outcome::Defer, GrantPath::Rule)
        }
    }
}

impl SyncPolicy for Dssp {
    fn name(&self) -> &'static str {
        "dssp"
    }

    fn on_push(&mut self, p: WorkerId, now: Timestamp) -> Result<SyncDecision, PolicyError> {
        self.gate.admit(p)?;
        let (outcome, path) = self.decide(p, now);
        let released = self.gate.release_within(self.range.s_lower);
        Ok(SyncDecision { outcome, path, released })
    }

    fn retire(&mut self, p: WorkerId) -> Vec<WorkerId> {
        self.gate.retire(p);
        self.gate.release_within(self.range.s_lower)
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

    fn credits(&self, p: WorkerId) -> u64 {
        self.credits.get(p)
    }
}
