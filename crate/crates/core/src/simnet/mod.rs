//! Deterministic discrete-event simulation of workers and the server.
//!
//! Each iteration of a worker walks through
//! `pull_return → compute_done → push_arrive → grant_deliver → pull_arrive
//! → pull_return`. Compute takes one draw from the worker's compute
//! distribution; the push, the pull request and the pull reply each take
//! one draw of the one-way delay. The OK travels with no delay, so
//! `grant_deliver` happens at the decision instant (for released workers,
//! at the instant of the push that released them). The weight snapshot is
//! taken at `pull_arrive`.
//!
//! Pushes arriving at the same instant are handled as one batch: all of
//! them are applied before any decision is made.

mod event;
mod timing;
mod trace;

use thiserror::Error;

use crate::config::{validate_config, ConfigError, ExperimentConfig, Timestamp, WeightVector, WorkerId};
use crate::engine::{Problem, PushRequest, Worker};
use crate::metrics::{summarize, LossSampler, MetricsReport, RunLog};
use crate::policy::{build_policy, SyncPolicy};
use crate::pserver::{ParameterServer, ServerError};

pub use event::{Event, EventKind, EventQueue};
pub use timing::{sample, worker_timings, WorkerTiming};
pub use trace::{
    max_grant_spread, staleness_of_update, update_staleness, EventTrace, TraceDecision, TraceEvent, TraceParseError,
    TRACE_HEADER,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("deadlock: event queue drained with workers {stuck:?} unfinished")]
    Deadlock { stuck: Vec<WorkerId>, partial: Box<RunOutput> },
    #[error("divergence: {0}")]
    Divergence(ServerError),
    #[error("server error: {0}")]
    Server(ServerError),
}

impl From<ServerError> for SimError {
    fn from(e: ServerError) -> Self {
        match e {
            ServerError::Divergence(_) | ServerError::NonFiniteGradient(_) => SimError::Divergence(e),
            other => SimError::Server(other),
        }
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: EventTrace,
    pub report: MetricsReport,
    pub log: RunLog,
    pub final_weights: WeightVector,
}

struct Slot {
    worker: Worker,
    timing: WorkerTiming,
    pending: Option<PushRequest>,
    snapshot: Option<WeightVector>,
    done: bool,
}

struct Sim<'a> {
    problem: &'a Problem,
    server: ParameterServer,
    slots: Vec<Slot>,
    queue: EventQueue,
    trace: EventTrace,
    sampler: LossSampler,
    update_losses: Vec<f64>,
}

impl Sim<'_> {
    fn record(&mut self, at: Timestamp, w: WorkerId, kind: EventKind, decision: TraceDecision) {
        let t_p = self.server.policy().clocks().get(w);
        self.trace.push(TraceEvent { at, worker: w, kind, t_p, decision });
    }

    fn on_pull_return(&mut self, now: Timestamp, w: WorkerId) {
        self.record(now, w, EventKind::PullReturn, TraceDecision::None);
        let slot = &mut self.slots[w.0];
        if let Some(snap) = slot.snapshot.take() {
            slot.worker.install(snap);
        }
        slot.pending = Some(slot.worker.compute());
        let dt = slot.timing.compute_time();
        self.queue.schedule(now + dt, EventKind::ComputeDone, w);
    }

    fn on_compute_done(&mut self, now: Timestamp, w: WorkerId) {
        self.record(now, w, EventKind::ComputeDone, TraceDecision::None);
        let dt = self.slots[w.0].timing.comm_delay();
        self.queue.schedule(now + dt, EventKind::PushArrive, w);
    }

    fn on_push_batch(&mut self, now: Timestamp, pushers: &[WorkerId]) -> Result<(), SimError> {
        let requests: Vec<PushRequest> = pushers
            .iter()
            .map(|w| self.slots[w.0].pending.take().expect("push without a computed gradient"))
            .collect();
        let gradients: Vec<_> = requests.iter().map(|r| r.gradient.clone()).collect();
        let decisions = self.server.handle_push_batch(&gradients, now)?;
        self.update_losses.extend(requests.iter().map(|r| r.batch_loss));
        let (problem, server) = (self.problem, &self.server);
        self.sampler.observe(server.weights().version, now, || problem.full_loss(&server.weights().values));

        // Trace rows replay the decisions in order; each pusher's own count
        // is final for this batch because it pushed exactly once.
        for (&w, d) in pushers.iter().zip(&decisions) {
            self.record(now, w, EventKind::PushArrive, TraceDecision::from_sync(d));
            if d.is_grant() {
                self.deliver(now, w, TraceDecision::Ok);
            }
            for &q in &d.released {
                self.deliver(now, q, TraceDecision::Release);
            }
        }
        Ok(())
    }

    fn deliver(&mut self, now: Timestamp, w: WorkerId, decision: TraceDecision) {
        self.record(now, w, EventKind::GrantDeliver, decision);
        let slot = &mut self.slots[w.0];
        if slot.worker.finished() {
            slot.done = true;
        } else {
            let dt = slot.timing.comm_delay();
            self.queue.schedule(now + dt, EventKind::PullArrive, w);
        }
    }

    fn on_pull_arrive(&mut self, now: Timestamp, w: WorkerId) -> Result<(), SimError> {
        self.record(now, w, EventKind::PullArrive, TraceDecision::None);
        let snap = self.server.handle_pull(w)?;
        let slot = &mut self.slots[w.0];
        slot.snapshot = Some(snap);
        let dt = slot.timing.comm_delay();
        self.queue.schedule(now + dt, EventKind::PullReturn, w);
        Ok(())
    }

    fn run(&mut self) -> Result<(), SimError> {
        let mut batch = Vec::new();
        while let Some(ev) = self.queue.pop() {
            match ev.kind {
                EventKind::PullReturn => self.on_pull_return(ev.at, ev.worker),
                EventKind::ComputeDone => self.on_compute_done(ev.at, ev.worker),
                EventKind::PushArrive => {
                    batch.clear();
                    batch.push(ev.worker);
                    while let Some(next) = self.queue.pop_if(ev.at, EventKind::PushArrive) {
                        batch.push(next.worker);
                    }
                    let pushers = std::mem::take(&mut batch);
                    self.on_push_batch(ev.at, &pushers)?;
                    batch = pushers;
                }
                EventKind::PullArrive => self.on_pull_arrive(ev.at, ev.worker)?,
                EventKind::GrantDeliver => unreachable!("grants are delivered inline"),
            }
        }
        Ok(())
    }

    fn finish(mut self, config: &ExperimentConfig) -> (RunOutput, Vec<WorkerId>) {
        let end = self.trace.events().last().map_or(0.0, |e| e.at);
        let (problem, server) = (self.problem, &self.server);
        self.sampler.finish(server.weights().version, end, || problem.full_loss(&server.weights().values));
        let stuck: Vec<WorkerId> = self.slots.iter().filter(|s| !s.done).map(|s| s.worker.id()).collect();
        let log = RunLog {
            paradigm: config.paradigm.name().to_string(),
            loss_curve: self.sampler.points,
            update_losses: self.update_losses,
            epochs: self.slots.iter().map(|s| s.worker.epochs()).collect(),
            loss_target: config.loss_target,
            complete: stuck.is_empty(),
            rejected_updates: self.server.rejected_updates(),
        };
        let report = summarize(&self.trace, &log);
        let out = RunOutput { trace: self.trace, report, log, final_weights: self.server.weights().clone() };
        (out, stuck)
    }
}

/// Runs `config` to completion in simulated time.
pub fn run_simulation(config: &ExperimentConfig) -> Result<RunOutput, SimError> {
    let config = validate_config(config.clone())?;
    let policy = build_policy(&config);
    run_simulation_with_policy(&config, policy)
}

/// Like [`run_simulation`] with an explicit policy (for fault injection and
/// custom registrations). `config` must already be validated.
pub fn run_simulation_with_policy(config: &ExperimentConfig, policy: Box<dyn SyncPolicy>) -> Result<RunOutput, SimError> {
    let problem = Problem::from_config(config);
    let workers = problem.workers(config);
    let budgets = workers.iter().map(|w| w.budget()).collect();
    let server = ParameterServer::new(problem.initial.clone(), config.learning_rate, policy).with_budgets(budgets);
    let mut queue = EventQueue::new();
    let slots: Vec<Slot> = workers
        .into_iter()
        .zip(worker_timings(config))
        .map(|(worker, timing)| {
            queue.schedule(timing.start, EventKind::PullReturn, worker.id());
            Slot { worker, timing, pending: None, snapshot: None, done: false }
        })
        .collect();
    let mut sampler = LossSampler::new(config.loss_every);
    sampler.observe(0, 0.0, || problem.full_loss(&problem.initial.values));

    let mut sim = Sim {
        problem: &problem,
        server,
        slots,
        queue,
        trace: EventTrace::new(),
        sampler,
        update_losses: Vec::new(),
    };
    sim.run()?;
    let (out, stuck) = sim.finish(config);
    if stuck.is_empty() {
        Ok(out)
    } else {
        Err(SimError::Deadlock { stuck, partial: Box::new(out) })
    }
}
