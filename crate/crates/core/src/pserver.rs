//! The logical parameter server: global weights, SGD updates, pulls, and
//! the grant/defer decision delegated to a [`SyncPolicy`].

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{split_seed, GradientVector, IterationCount, Timestamp, WeightVector, WorkerId};
use crate::policy::{PolicyError, SyncDecision, SyncPolicy};

const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServerError {
    #[error(transparent)]
    Protocol(#[from] PolicyError),
    #[error("gradient from worker {worker} has dimension {got}, expected {expected}")]
    DimensionMismatch { worker: WorkerId, got: usize, expected: usize },
    #[error("gradient from worker {0} has non-finite entries")]
    NonFiniteGradient(WorkerId),
    #[error("weights diverged to non-finite values at version {0}")]
    Divergence(u64),
    #[error("worker {0} pulled without holding a grant")]
    PullWithoutGrant(WorkerId),
}

/// Deterministic initial weights, uniform in `[-0.5, 0.5]` per coordinate.
pub fn initial_weights(dim: usize, seed: u64) -> WeightVector {
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(seed, INIT_STREAM, 0));
    WeightVector::new((0..dim).map(|_| rng.random_range(-0.5..=0.5)).collect())
}

/// Plain SGD step `w - lr * g`; the version advances by one.
pub fn apply_update(weights: &WeightVector, g: &GradientVector, learning_rate: f64) -> Result<WeightVector, ServerError> {
    if g.dim() != weights.dim() {
        return Err(ServerError::DimensionMismatch { worker: g.source, got: g.dim(), expected: weights.dim() });
    }
    let values: Vec<f64> = weights.values.iter().zip(&g.values).map(|(w, gi)| w - learning_rate * gi).collect();
    let next = WeightVector { values, version: weights.version + 1 };
    if !next.is_finite() {
        return Err(ServerError::Divergence(next.version));
    }
    Ok(next)
}

pub struct ParameterServer {
    weights: WeightVector,
    learning_rate: f64,
    policy: Box<dyn SyncPolicy>,
    /// Workers currently allowed to pull.
    may_pull: Vec<bool>,
    /// Deferred workers and the time they were parked.
    pending: BTreeMap<WorkerId, Timestamp>,
    rejected: u64,
    /// Pushes after which a worker is retired automatically.
    budgets: Option<Vec<IterationCount>>,
}

impl ParameterServer {
    pub fn new(initial: WeightVector, learning_rate: f64, policy: Box<dyn SyncPolicy>) -> Self {
        let workers = policy.clocks().len();
        Self {
            weights: initial,
            learning_rate,
            policy,
            may_pull: vec![true; workers],
            pending: BTreeMap::new(),
            rejected: 0,
            budgets: None,
        }
    }

    /// Retires each worker right after the decision on its final push, so a
    /// finished worker never holds back the others.
    pub fn with_budgets(mut self, budgets: Vec<IterationCount>) -> Self {
        assert_eq!(budgets.len(), self.may_pull.len(), "one budget per worker");
        self.budgets = Some(budgets);
        self
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn policy(&self) -> &dyn SyncPolicy {
        self.policy.as_ref()
    }

    pub fn pending(&self) -> &BTreeMap<WorkerId, Timestamp> {
        &self.pending
    }

    /// Pushes rejected for non-finite entries.
    pub fn rejected_updates(&self) -> u64 {
        self.rejected
    }

    fn check_push(&mut self, g: &GradientVector) -> Result<(), ServerError> {
        let p = g.source;
        if p.0 >= self.may_pull.len() {
            return Err(PolicyError::UnknownWorker(p).into());
        }
        if self.policy.is_deferred(p) {
            return Err(PolicyError::PushWhileDeferred(p).into());
        }
        if g.dim() != self.weights.dim() {
            return Err(ServerError::DimensionMismatch { worker: p, got: g.dim(), expected: self.weights.dim() });
        }
        if !g.is_finite() {
            self.rejected += 1;
            return Err(ServerError::NonFiniteGradient(p));
        }
        Ok(())
    }

    /// Applies the update, then asks the policy whether `g.source` may go on.
    pub fn handle_push(&mut self, g: &GradientVector, now: Timestamp) -> Result<SyncDecision, ServerError> {
        let mut out = self.handle_push_batch(std::slice::from_ref(g), now)?;
        Ok(out.pop().expect("one decision per push"))
    }

    /// Pushes that arrive at the same instant: every gradient is applied
    /// before any grant decision is made. Decisions are returned in input
    /// order.
    pub fn handle_push_batch(
        &mut self,
        gradients: &[GradientVector],
        now: Timestamp,
    ) -> Result<Vec<SyncDecision>, ServerError> {
        for g in gradients {
            self.check_push(g)?;
        }
        for g in gradients {
            self.weights = apply_update(&self.weights, g, self.learning_rate)?;
            self.may_pull[g.source.0] = false;
        }
        let mut decisions = Vec::with_capacity(gradients.len());
        for g in gradients {
            let p = g.source;
            let mut d = self.policy.on_push(p, now)?;
            if d.is_grant() {
                self.may_pull[p.0] = true;
            } else {
                self.pending.insert(p, now);
            }
            if self.budgets.as_ref().is_some_and(|b| self.policy.clocks().get(p) >= b[p.0]) {
                d.released.extend(self.policy.retire(p));
                d.released.sort_unstable();
                d.released.dedup();
            }
            self.mark_released(&d.released);
            decisions.push(d);
        }
        Ok(decisions)
    }

    /// Declares that `p` will never push again; returns workers released by it.
    pub fn retire(&mut self, p: WorkerId) -> Vec<WorkerId> {
        let released = self.policy.retire(p);
        self.mark_released(&released);
        released
    }

    fn mark_released(&mut self, released: &[WorkerId]) {
        for q in released {
            self.pending.remove(q);
            self.may_pull[q.0] = true;
        }
    }

    /// Snapshot of the current weights.
    pub fn handle_pull(&self, p: WorkerId) -> Result<WeightVector, ServerError> {
        match self.may_pull.get(p.0) {
            None => Err(PolicyError::UnknownWorker(p).into()),
            Some(false) => Err(ServerError::PullWithoutGrant(p)),
            Some(true) => Ok(self.weights.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::StalenessRange;
    use crate::policy::{Asp, Dssp, Outcome, Ssp};

    fn grad(p: usize, v: &[f64]) -> GradientVector {
        GradientVector { values: v.to_vec(), source: WorkerId(p), source_iter: 0 }
    }

    fn wv(v: &[f64]) -> WeightVector {
        WeightVector::new(v.to_vec())
    }

    #[test]
    fn sgd_step_arithmetic() {
        let w = apply_update(&wv(&[1.0, 2.0]), &grad(0, &[0.5, -1.0]), 0.1).unwrap();
        assert!((w.values[0] - 0.95).abs() < 1e-15 && (w.values[1] - 2.1).abs() < 1e-15);
        assert_eq!(w.version, 1);
        let w = apply_update(&wv(&[0.0, 0.0]), &grad(0, &[-1.0, -1.0]), 0.5).unwrap();
        assert_eq!(w.values, vec![0.5, 0.5]);
    }

    #[test]
    fn zero_gradient_still_bumps_version() {
        let w0 = wv(&[3.0, -4.0]);
        let w = apply_update(&w0, &grad(0, &[0.0, 0.0]), 0.7).unwrap();
        assert_eq!(w.values, w0.values);
        assert_eq!(w.version, 1);
    }

    #[test]
    fn divergence_is_reported() {
        let w = apply_update(&wv(&[f64::MAX]), &grad(0, &[-f64::MAX]), 2.0);
        assert_eq!(w, Err(ServerError::Divergence(1)));
    }

    #[test]
    fn asp_push_updates_and_grants() {
        let mut s = ParameterServer::new(wv(&[0.0]), 1.0, Box::new(Asp::new(2)));
        let d = s.handle_push(&grad(1, &[2.0]), 0.0).unwrap();
        assert_eq!(d.outcome, Outcome::Grant);
        assert_eq!(s.weights().values, vec![-2.0]);
        assert_eq!(s.handle_pull(WorkerId(1)).unwrap().version, 1);
    }

    #[test]
    fn ssp_violation_updates_then_parks() {
        let mut s = ParameterServer::new(wv(&[0.0]), 1.0, Box::new(Ssp::new(2, 0)));
        let d = s.handle_push(&grad(0, &[1.0]), 2.5).unwrap();
        assert_eq!(d.outcome, Outcome::Defer);
        assert_eq!(s.weights().version, 1);
        assert_eq!(s.pending().get(&WorkerId(0)), Some(&2.5));
        assert_eq!(s.handle_pull(WorkerId(0)), Err(ServerError::PullWithoutGrant(WorkerId(0))));
        assert!(matches!(s.handle_push(&grad(0, &[1.0]), 3.0), Err(ServerError::Protocol(_))));

        // Release snapshot includes the releasing update.
        let d = s.handle_push(&grad(1, &[1.0]), 4.0).unwrap();
        assert_eq!(d.released, vec![WorkerId(0)]);
        assert!(s.pending().is_empty());
        let snap = s.handle_pull(WorkerId(0)).unwrap();
        assert_eq!((snap.version, snap.values[0]), (2, -2.0));
    }

    #[test]
    fn simultaneous_pushes_apply_before_deciding() {
        let mut s = ParameterServer::new(wv(&[0.0, 0.0]), 0.5, Box::new(Ssp::new(2, 0)));
        let ds = s.handle_push_batch(&[grad(0, &[1.0, 0.0]), grad(1, &[0.0, 1.0])], 1.0).unwrap();
        assert_eq!(ds[0].outcome, Outcome::Defer);
        assert_eq!(ds[1].outcome, Outcome::Grant);
        assert_eq!(ds[1].released, vec![WorkerId(0)]);
        assert_eq!(s.weights().version, 2);
        // Both pulls see both gradients.
        assert_eq!(s.handle_pull(WorkerId(0)).unwrap().values, vec![-0.5, -0.5]);
        assert_eq!(s.handle_pull(WorkerId(1)).unwrap().values, vec![-0.5, -0.5]);
    }

    #[test]
    fn bad_gradients_are_rejected_without_side_effects() {
        let mut s = ParameterServer::new(wv(&[0.0, 0.0]), 0.5, Box::new(Asp::new(1)));
        assert!(matches!(
            s.handle_push(&grad(0, &[1.0]), 0.0),
            Err(ServerError::DimensionMismatch { got: 1, expected: 2, .. })
        ));
        assert_eq!(s.handle_push(&grad(0, &[f64::NAN, 0.0]), 0.0), Err(ServerError::NonFiniteGradient(WorkerId(0))));
        assert_eq!(s.rejected_updates(), 1);
        assert_eq!(s.weights().version, 0);
        assert_eq!(s.policy().clocks().get(WorkerId(0)), 0);
    }

    #[test]
    fn initial_pull_is_version_zero_for_everyone() {
        let init = initial_weights(5, 11);
        assert!(init.values.iter().all(|v| (-0.5..=0.5).contains(v)));
        let s = ParameterServer::new(
            init.clone(),
            0.1,
            Box::new(Dssp::new(3, StalenessRange { s_lower: 1, r_max: 2 })),
        );
        for p in 0..3 {
            assert_eq!(s.handle_pull(WorkerId(p)).unwrap(), init);
        }
    }

    #[test]
    fn final_push_retires_and_releases() {
        // Worker 1 has a budget of one push; worker 0 is parked behind it.
        let mut s = ParameterServer::new(wv(&[0.0]), 1.0, Box::new(Ssp::new(2, 0))).with_budgets(vec![5, 1]);
        assert!(!s.handle_push(&grad(0, &[1.0]), 0.0).unwrap().is_grant());
        let d = s.handle_push(&grad(1, &[1.0]), 1.0).unwrap();
        assert!(d.is_grant());
        assert_eq!(d.released, vec![WorkerId(0)]);
        assert!(s.policy().clocks().is_retired(WorkerId(1)));
        // Worker 0 is now alone and never blocks again.
        for k in 0..4 {
            assert!(s.handle_push(&grad(0, &[1.0]), 2.0 + k as f64).unwrap().is_grant());
        }
    }

    #[test]
    fn deferred_final_push_released_when_nobody_is_left() {
        let mut s = ParameterServer::new(wv(&[0.0]), 1.0, Box::new(Ssp::new(2, 0))).with_budgets(vec![1, 1]);
        let d = s.handle_push(&grad(0, &[1.0]), 0.0).unwrap();
        assert_eq!(d.outcome, Outcome::Defer);
        // Worker 0 is retired but parked; worker 1's final push frees it.
        let d = s.handle_push(&grad(1, &[1.0]), 1.0).unwrap();
        assert!(d.is_grant());
        assert_eq!(d.released, vec![WorkerId(0)]);
        assert!(s.pending().is_empty());
    }

    #[test]
    fn pull_snapshot_is_isolated() {
        let mut s = ParameterServer::new(wv(&[1.0]), 1.0, Box::new(Asp::new(1)));
        let snap = s.handle_pull(WorkerId(0)).unwrap();
        s.handle_push(&grad(0, &[1.0]), 0.0).unwrap();
        assert_eq!(snap, wv(&[1.0]));
    }
}
