//! Synchronization paradigms as push-driven decision state machines.
//!
//! Every paradigm implements [`SyncPolicy`]. The server calls
//! [`SyncPolicy::on_push`] once per received push; the returned
//! [`SyncDecision`] says whether the pusher gets its OK now and which parked
//! workers became releasable as a side effect.
//!
//! Paradigms are registered by name in [`registry`] and built from an
//! [`ExperimentConfig`](crate::config::ExperimentConfig) at runtime.

mod asp;
mod bsp;
pub mod controller;
mod dssp;
pub mod registry;
mod ssp;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::config::{ExperimentConfig, IterationCount, Paradigm, Timestamp, WorkerId};

pub use asp::Asp;
pub use bsp::Bsp;
pub use controller::{predict_extra_iterations, synchronization_controller, MIN_INTERVAL};
pub use dssp::Dssp;
pub use registry::{build_policy, PolicyRegistry};
pub use ssp::Ssp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Grant,
    Defer,
}

/// Which branch of the paradigm produced a grant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrantPath {
    /// Threshold or barrier rule (also used for every defer).
    Rule,
    /// An extra iteration paid for with a previously minted credit.
    Credit,
    /// The controller minted this many credits and the push was granted.
    Minted(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyncDecision {
    pub outcome: Outcome,
    pub path: GrantPath,
    /// Parked workers unblocked by this push, ascending id.
    pub released: Vec<WorkerId>,
}

impl SyncDecision {
    pub fn is_grant(&self) -> bool {
        self.outcome == Outcome::Grant
    }

    /// Short label used in traces: `grant`, `credit`, `mint:<r>` or `defer`.
    pub fn label(&self) -> String {
        match (self.outcome, self.path) {
            (Outcome::Defer, _) => "defer".to_string(),
            (Outcome::Grant, GrantPath::Rule) => "grant".to_string(),
            (Outcome::Grant, GrantPath::Credit) => "credit".to_string(),
            (Outcome::Grant, GrantPath::Minted(r)) => format!("mint:{r}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("unknown worker {0}")]
    UnknownWorker(WorkerId),
    #[error("worker {0} pushed while deferred")]
    PushWhileDeferred(WorkerId),
    #[error("worker {0} pushed after retiring")]
    PushAfterRetire(WorkerId),
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum StalenessBoundError {
    #[error("bsp runs in lockstep: staleness bound is 0 by construction")]
    Lockstep,
    #[error("asp has no staleness bound")]
    Unbounded,
}

/// Largest lead (in pushes) a worker may be granted at: `s_lower` for SSP,
/// `s_lower + r_max` for DSSP.
pub fn max_staleness_bound(config: &ExperimentConfig) -> Result<u64, StalenessBoundError> {
    match config.paradigm {
        Paradigm::Ssp => Ok(config.staleness.s_lower),
        Paradigm::Dssp => Ok(config.staleness.upper()),
        Paradigm::Bsp => Err(StalenessBoundError::Lockstep),
        Paradigm::Asp => Err(StalenessBoundError::Unbounded),
    }
}

/// Push counts per worker, plus which workers have retired (will never push
/// again). Retired workers are ignored when locating the slowest and fastest
/// workers so a finished worker cannot stall the others.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IterationClockTable {
    counts: Vec<IterationCount>,
    retired: Vec<bool>,
}

impl IterationClockTable {
    pub fn new(workers: usize) -> Self {
        Self { counts: vec![0; workers], retired: vec![false; workers] }
    }

    pub fn from_counts(counts: Vec<IterationCount>) -> Self {
        let n = counts.len();
        Self { counts, retired: vec![false; n] }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn contains(&self, p: WorkerId) -> bool {
        p.0 < self.counts.len()
    }

    pub fn get(&self, p: WorkerId) -> IterationCount {
        self.counts[p.0]
    }

    pub fn counts(&self) -> &[IterationCount] {
        &self.counts
    }

    pub fn increment(&mut self, p: WorkerId) -> IterationCount {
        self.counts[p.0] += 1;
        self.counts[p.0]
    }

    pub fn retire(&mut self, p: WorkerId) {
        self.retired[p.0] = true;
    }

    pub fn is_retired(&self, p: WorkerId) -> bool {
        self.retired[p.0]
    }

    fn active(&self) -> impl Iterator<Item = (WorkerId, IterationCount)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.retired[*i])
            .map(|(i, &c)| (WorkerId(i), c))
    }

    /// Active worker with the fewest pushes; smallest id wins ties.
    pub fn slowest(&self) -> Option<(WorkerId, IterationCount)> {
        self.active().fold(None, |best, (w, c)| match best {
            Some((_, bc)) if bc <= c => best,
            _ => Some((w, c)),
        })
    }

    /// Ties count as fastest.
    pub fn is_fastest(&self, p: WorkerId) -> bool {
        let tp = self.counts[p.0];
        self.active().all(|(_, c)| tp >= c)
    }

    /// Largest count over all workers minus smallest count over active ones.
    pub fn spread(&self) -> u64 {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        match self.slowest() {
            Some((_, min)) => max.saturating_sub(min),
            None => 0,
        }
    }
}

/// Timestamps of the two most recent pushes per worker.
#[derive(Debug, Clone, PartialEq)]
pub struct PushHistoryTable {
    latest: Vec<Timestamp>,
    previous: Vec<Timestamp>,
    populated: Vec<u64>,
}

impl PushHistoryTable {
    pub fn new(workers: usize) -> Self {
        Self {
            latest: vec![0.0; workers],
            previous: vec![0.0; workers],
            populated: vec![0; workers],
        }
    }

    /// Shifts latest into previous and stores `at` as latest.
    pub fn record(&mut self, p: WorkerId, at: Timestamp) {
        let i = p.0;
        self.previous[i] = self.latest[i];
        self.latest[i] = at;
        self.populated[i] += 1;
    }

    pub fn latest(&self, p: WorkerId) -> Option<Timestamp> {
        (self.populated[p.0] >= 1).then(|| self.latest[p.0])
    }

    pub fn previous(&self, p: WorkerId) -> Option<Timestamp> {
        (self.populated[p.0] >= 2).then(|| self.previous[p.0])
    }

    pub fn populated(&self, p: WorkerId) -> u64 {
        self.populated[p.0]
    }

    /// Length of the most recent iteration interval, if two pushes are known.
    pub fn interval(&self, p: WorkerId) -> Option<f64> {
        (self.populated[p.0] >= 2).then(|| self.latest[p.0] - self.previous[p.0])
    }

    /// Adds `delta` to every recorded timestamp.
    pub fn translate(&mut self, delta: f64) {
        for v in self.latest.iter_mut().chain(self.previous.iter_mut()) {
            *v += delta;
        }
    }
}

/// Extra iterations beyond `s_lower` each worker may still run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CreditTable {
    credits: Vec<u64>,
}

impl CreditTable {
    pub fn new(workers: usize) -> Self {
        Self { credits: vec![0; workers] }
    }

    pub fn get(&self, p: WorkerId) -> u64 {
        self.credits[p.0]
    }

    pub fn set(&mut self, p: WorkerId, r: u64) {
        self.credits[p.0] = r;
    }

    /// Spends one credit if any are left.
    pub fn take(&mut self, p: WorkerId) -> bool {
        let c = &mut self.credits[p.0];
        if *c > 0 {
            *c -= 1;
            true
        } else {
            false
        }
    }
}

/// Interface shared by every synchronization paradigm.
///
/// Callers serialize all calls; implementations are plain state machines and
/// never block.
pub trait SyncPolicy: Send {
    fn name(&self) -> &'static str;

    /// Records a push from `p` at `now` and decides whether `p` may continue.
    fn on_push(&mut self, p: WorkerId, now: Timestamp) -> Result<SyncDecision, PolicyError>;

    /// Marks `p` as finished. Returns parked workers that no longer have to
    /// wait for it.
    fn retire(&mut self, p: WorkerId) -> Vec<WorkerId>;

    fn clocks(&self) -> &IterationClockTable;

    fn is_deferred(&self, p: WorkerId) -> bool;

    fn deferred(&self) -> Vec<WorkerId>;

    /// Remaining credits of `p` (always 0 for paradigms without credits).
    fn credits(&self, _p: WorkerId) -> u64 {
        0
    }
}

/// Clock table and parked-worker set with the threshold release rule that
/// BSP, SSP and DSSP share.
#[derive(Debug, Clone)]
pub(crate) struct Gate {
    pub clocks: IterationClockTable,
    deferred: BTreeSet<WorkerId>,
}

impl Gate {
    pub fn new(workers: usize) -> Self {
        Self { clocks: IterationClockTable::new(workers), deferred: BTreeSet::new() }
    }

    /// Validates the push preconditions and bumps the pusher's count.
    pub fn admit(&mut self, p: WorkerId) -> Result<IterationCount, PolicyError> {
        if !self.clocks.contains(p) {
            return Err(PolicyError::UnknownWorker(p));
        }
        if self.deferred.contains(&p) {
            return Err(PolicyError::PushWhileDeferred(p));
        }
        if self.clocks.is_retired(p) {
            return Err(PolicyError::PushAfterRetire(p));
        }
        Ok(self.clocks.increment(p))
    }

    /// How far `p` is ahead of the slowest active worker.
    pub fn lead(&self, p: WorkerId) -> u64 {
        let tp = self.clocks.get(p);
        self.clocks.slowest().map_or(0, |(_, min)| tp.saturating_sub(min))
    }

    pub fn park(&mut self, p: WorkerId) {
        self.deferred.insert(p);
    }

    pub fn is_parked(&self, p: WorkerId) -> bool {
        self.deferred.contains(&p)
    }

    pub fn parked(&self) -> Vec<WorkerId> {
        self.deferred.iter().copied().collect()
    }

    /// Releases every parked worker whose lead is within `threshold`
    /// (all of them if no active worker remains).
    pub fn release_within(&mut self, threshold: u64) -> Vec<WorkerId> {
        let min = self.clocks.slowest().map(|(_, c)| c);
        let ready: Vec<WorkerId> = self
            .deferred
            .iter()
            .copied()
            .filter(|q| match min {
                Some(min) => self.clocks.get(*q).saturating_sub(min) <= threshold,
                None => true,
            })
            .collect();
        for q in &ready {
            self.deferred.remove(q);
        }
        ready
    }

    pub fn retire(&mut self, p: WorkerId) {
        if self.clocks.contains(p) {
            self.clocks.retire(p);
        }
    }
}
