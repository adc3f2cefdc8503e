//! Real threads: one per worker, the server behind a single mutex.
//!
//! Workers run the same compute/push/pull loop as the simulator. Compute
//! time is spent in a busy-wait (after the gradient itself is computed),
//! communication delays are sleeps, and every timestamp is monotonic time
//! since the run started. A deferred worker blocks on a condition variable
//! until the push that releases it flags it.
//!
//! Durations from the config are taken as real seconds, so threaded configs
//! use millisecond-scale compute times.

use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::config::{validate_config, ConfigError, ExperimentConfig, Timestamp, WorkerId};
use crate::engine::{Problem, Worker};
use crate::metrics::{summarize, LossSampler, RunLog};
use crate::policy::{build_policy, SyncPolicy};
use crate::pserver::{ParameterServer, ServerError};
use crate::simnet::{worker_timings, EventKind, EventTrace, RunOutput, TraceDecision, TraceEvent, WorkerTiming};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Why a threaded run stopped before every worker finished.
#[derive(Debug, Clone, PartialEq)]
pub enum RunFailure {
    Server(ServerError),
    Panic { worker: WorkerId, message: String },
    Aborted,
}

#[derive(Debug, Clone)]
pub struct ThreadedOutput {
    pub output: RunOutput,
    /// Workers that had not finished when the run stopped.
    pub stuck: Vec<WorkerId>,
    pub failure: Option<RunFailure>,
}

struct State {
    server: ParameterServer,
    trace: EventTrace,
    sampler: LossSampler,
    update_losses: Vec<f64>,
    /// Set by the push that releases a parked worker; consumed by it.
    released: Vec<bool>,
    done: Vec<bool>,
    epochs: Vec<u64>,
    failure: Option<RunFailure>,
}

struct Shared {
    state: Mutex<State>,
    signal: Condvar,
    abort: AtomicBool,
    start: Instant,
    problem: Problem,
}

impl Shared {
    fn now(&self) -> Timestamp {
        self.start.elapsed().as_secs_f64()
    }

    /// The lock survives a panicking worker; the state is still consistent
    /// because every mutation completes before the guard is dropped.
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn fail(&self, failure: RunFailure) {
        let mut st = self.lock();
        st.failure.get_or_insert(failure);
        drop(st);
        self.abort.store(true, Ordering::SeqCst);
        self.signal.notify_all();
    }

    fn aborted(&self) -> bool {
        self.abort.load(Ordering::SeqCst)
    }
}

fn record(st: &mut State, at: Timestamp, w: WorkerId, kind: EventKind, decision: TraceDecision) {
    let t_p = st.server.policy().clocks().get(w);
    st.trace.push(TraceEvent { at, worker: w, kind, t_p, decision });
}

/// A threaded run in progress.
pub struct LiveRunHandle {
    pub config: ExperimentConfig,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl LiveRunHandle {
    /// Asks every worker to stop at its next checkpoint.
    pub fn abort(&self) {
        self.shared.abort.store(true, Ordering::SeqCst);
        self.shared.signal.notify_all();
    }

    pub fn is_finished(&self) -> bool {
        self.shared.lock().done.iter().all(|&d| d)
    }

    /// Workers that have not finished yet.
    pub fn unfinished(&self) -> Vec<WorkerId> {
        let st = self.shared.lock();
        (0..st.done.len()).filter(|&i| !st.done[i]).map(WorkerId).collect()
    }

    /// Joins every worker thread and aggregates the recorded trace.
    pub fn join(self) -> ThreadedOutput {
        let mut panics = Vec::new();
        for (i, t) in self.threads.into_iter().enumerate() {
            if let Err(payload) = t.join() {
                panics.push((WorkerId(i), panic_message(payload.as_ref())));
            }
        }
        let mut st = self.shared.lock();
        let now = self.shared.now();
        let problem = &self.shared.problem;
        let version = st.server.weights().version;
        let weights = st.server.weights().values.clone();
        st.sampler.finish(version, now, || problem.full_loss(&weights));
        st.trace.sort_by_time();

        let stuck: Vec<WorkerId> = (0..st.done.len()).filter(|&i| !st.done[i]).map(WorkerId).collect();
        let mut failure = st.failure.clone();
        if let Some((worker, message)) = panics.into_iter().next() {
            failure.get_or_insert(RunFailure::Panic { worker, message });
        }
        if failure.is_none() && !stuck.is_empty() {
            failure = Some(RunFailure::Aborted);
        }
        let log = RunLog {
            paradigm: self.config.paradigm.name().to_string(),
            loss_curve: st.sampler.points.clone(),
            update_losses: st.update_losses.clone(),
            epochs: st.epochs.clone(),
            loss_target: self.config.loss_target,
            complete: stuck.is_empty() && failure.is_none(),
            rejected_updates: st.server.rejected_updates(),
        };
        let report = summarize(&st.trace, &log);
        let output = RunOutput { trace: st.trace.clone(), report, log, final_weights: st.server.weights().clone() };
        ThreadedOutput { output, stuck, failure }
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".to_string()
    }
}

/// Waits for the run to finish, at most `budget` seconds. On overrun the run
/// is aborted and the unfinished workers are returned.
pub fn deadline_guard(handle: &LiveRunHandle, budget: f64) -> Option<Vec<WorkerId>> {
    let deadline = Instant::now() + Duration::from_secs_f64(budget.max(0.0));
    let shared = &handle.shared;
    let mut st = shared.lock();
    loop {
        if st.done.iter().all(|&d| d) {
            return None;
        }
        let now = Instant::now();
        if now >= deadline {
            let stuck = (0..st.done.len()).filter(|&i| !st.done[i]).map(WorkerId).collect();
            st.failure.get_or_insert(RunFailure::Aborted);
            drop(st);
            handle.abort();
            return Some(stuck);
        }
        // Any panic or failure also ends the wait.
        if shared.aborted() {
            return None;
        }
        st = shared.signal.wait_timeout(st, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
    }
}

/// Starts a threaded run with the policy selected by the config.
pub fn start_threaded(config: &ExperimentConfig) -> Result<LiveRunHandle, RunError> {
    let config = validate_config(config.clone())?;
    let policy = build_policy(&config);
    Ok(start_threaded_with_policy(&config, policy))
}

/// Starts a threaded run with an explicit policy. `config` must be valid.
pub fn start_threaded_with_policy(config: &ExperimentConfig, policy: Box<dyn SyncPolicy>) -> LiveRunHandle {
    let problem = Problem::from_config(config);
    let workers = problem.workers(config);
    let n = workers.len();
    let budgets = workers.iter().map(|w| w.budget()).collect();
    let server = ParameterServer::new(problem.initial.clone(), config.learning_rate, policy).with_budgets(budgets);
    let mut sampler = LossSampler::new(config.loss_every);
    sampler.observe(0, 0.0, || problem.full_loss(&problem.initial.values));
    let shared = Arc::new(Shared {
        state: Mutex::new(State {
            server,
            trace: EventTrace::new(),
            sampler,
            update_losses: Vec::new(),
            released: vec![false; n],
            done: vec![false; n],
            epochs: vec![0; n],
            failure: None,
        }),
        signal: Condvar::new(),
        abort: AtomicBool::new(false),
        start: Instant::now(),
        problem,
    });
    let threads = workers
        .into_iter()
        .zip(worker_timings(config))
        .map(|(worker, timing)| {
            let shared = Arc::clone(&shared);
            thread::Builder::new()
                .name(format!("worker-{}", worker.id()))
                .spawn(move || {
                    let id = worker.id();
                    let result = panic::catch_unwind(AssertUnwindSafe(|| worker_loop(&shared, worker, timing)));
                    if let Err(payload) = result {
                        shared.fail(RunFailure::Panic { worker: id, message: panic_message(payload.as_ref()) });
                        panic::resume_unwind(payload);
                    }
                })
                .expect("spawn worker thread")
        })
        .collect();
    LiveRunHandle { config: config.clone(), shared, threads }
}

/// Runs `config` with real threads until every worker finishes.
pub fn run_threaded(config: &ExperimentConfig) -> Result<ThreadedOutput, RunError> {
    Ok(start_threaded(config)?.join())
}

pub fn run_threaded_with_policy(config: &ExperimentConfig, policy: Box<dyn SyncPolicy>) -> ThreadedOutput {
    start_threaded_with_policy(config, policy).join()
}

fn spin_until(shared: &Shared, until: Instant) {
    while Instant::now() < until && !shared.aborted() {
        std::hint::spin_loop();
    }
}

fn sleep_secs(secs: f64) {
    if secs > 0.0 {
        thread::sleep(Duration::from_secs_f64(secs));
    }
}

fn worker_loop(shared: &Shared, mut worker: Worker, mut timing: WorkerTiming) {
    let id = worker.id();
    sleep_secs(timing.start);
    {
        let mut st = shared.lock();
        let now = shared.now();
        record(&mut st, now, id, EventKind::PullReturn, TraceDecision::None);
    }
    while !shared.aborted() {
        let began = Instant::now();
        let req = worker.compute();
        spin_until(shared, began + Duration::from_secs_f64(timing.compute_time()));
        if shared.aborted() {
            return;
        }
        {
            let mut st = shared.lock();
            let now = shared.now();
            record(&mut st, now, id, EventKind::ComputeDone, TraceDecision::None);
        }
        sleep_secs(timing.comm_delay());

        let mut st = shared.lock();
        if shared.aborted() {
            return;
        }
        let now = shared.now();
        let decision = match st.server.handle_push(&req.gradient, now) {
            Ok(d) => d,
            Err(e) => {
                drop(st);
                shared.fail(RunFailure::Server(e));
                return;
            }
        };
        st.update_losses.push(req.batch_loss);
        st.epochs[id.0] = worker.epochs();
        let version = st.server.weights().version;
        let State { sampler, server, .. } = &mut *st;
        sampler.observe(version, now, || shared.problem.full_loss(&server.weights().values));
        record(&mut st, now, id, EventKind::PushArrive, TraceDecision::from_sync(&decision));
        if decision.is_grant() {
            record(&mut st, now, id, EventKind::GrantDeliver, TraceDecision::Ok);
        }
        for &q in &decision.released {
            record(&mut st, now, q, EventKind::GrantDeliver, TraceDecision::Release);
            st.released[q.0] = true;
        }
        if !decision.released.is_empty() {
            shared.signal.notify_all();
        }
        if !decision.is_grant() {
            while !st.released[id.0] && !shared.aborted() {
                st = shared.signal.wait(st).unwrap_or_else(|e| e.into_inner());
            }
            if !st.released[id.0] {
                return;
            }
        }
        st.released[id.0] = false;
        if worker.finished() {
            st.done[id.0] = true;
            drop(st);
            shared.signal.notify_all();
            return;
        }
        drop(st);

        sleep_secs(timing.comm_delay());
        let snapshot = {
            let mut st = shared.lock();
            let now = shared.now();
            record(&mut st, now, id, EventKind::PullArrive, TraceDecision::None);
            match st.server.handle_pull(id) {
                Ok(w) => w,
                Err(e) => {
                    drop(st);
                    shared.fail(RunFailure::Server(e));
                    return;
                }
            }
        };
        sleep_secs(timing.comm_delay());
        worker.install(snapshot);
        let mut st = shared.lock();
        let now = shared.now();
        record(&mut st, now, id, EventKind::PullReturn, TraceDecision::None);
    }
}
