//! Aggregation of traces into reports, regret curves and CSV output.
//!
//! # CSV schemas
//!
//! Report (`report.csv`, `compare.csv`, `sweep_ssp.csv`):
//!
//! ```text
//! paradigm,worker,iterations,epochs,wait_s,compute_s,comm_s,updates_total,max_staleness,time_to_target_s,final_loss
//! ```
//!
//! `worker` is a worker id or `all`. The `all` row sums iterations and the
//! three time components over workers and reports the smallest epoch count.
//! `time_to_target_s` is empty when no target is set or it was never
//! reached. Floats use the shortest exact decimal form.
//!
//! Loss curve (`loss.csv`): `update,time_s,loss`.
//! Regret (`regret.csv`): `t,regret,avg_regret`.

use std::io::Write;

use thiserror::Error;

use crate::config::{ModelKind, Timestamp, WorkerId};
use crate::engine::{Dataset, Model};
use crate::simnet::{update_staleness, EventKind, EventTrace};

pub const REPORT_COLUMNS: [&str; 11] = [
    "paradigm",
    "worker",
    "iterations",
    "epochs",
    "wait_s",
    "compute_s",
    "comm_s",
    "updates_total",
    "max_staleness",
    "time_to_target_s",
    "final_loss",
];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("regret is undefined for the non-convex model kind {0}")]
    NonConvex(ModelKind),
    #[error("reference solver did not reach gradient norm {tol} after {iterations} steps (norm {norm})")]
    NoConvergence { tol: f64, iterations: u64, norm: f64 },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Full-dataset loss after `update` applied updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub update: u64,
    pub time: Timestamp,
    pub loss: f64,
}

/// Samples the full-dataset loss every `every` applied updates.
#[derive(Debug, Clone)]
pub struct LossSampler {
    every: u64,
    last: Option<u64>,
    pub points: Vec<LossPoint>,
}

impl LossSampler {
    pub fn new(every: u64) -> Self {
        Self { every: every.max(1), last: None, points: Vec::new() }
    }

    /// Records a point if `version` reached a new multiple of `every` (or
    /// is the first observation). `loss` is only evaluated when sampling.
    pub fn observe(&mut self, version: u64, time: Timestamp, loss: impl FnOnce() -> f64) {
        let due = match self.last {
            None => true,
            Some(last) => version / self.every > last / self.every,
        };
        if due {
            self.points.push(LossPoint { update: version, time, loss: loss() });
            self.last = Some(version);
        }
    }

    /// Adds a final point unless `version` is already the last one sampled.
    pub fn finish(&mut self, version: u64, time: Timestamp, loss: impl FnOnce() -> f64) {
        if self.last != Some(version) {
            self.points.push(LossPoint { update: version, time, loss: loss() });
            self.last = Some(version);
        }
    }
}

/// Side information collected during a run that the trace does not carry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub paradigm: String,
    pub loss_curve: Vec<LossPoint>,
    /// Mini-batch loss at the pusher's local weights, one per applied
    /// update in application order.
    pub update_losses: Vec<f64>,
    /// Completed epochs per worker.
    pub epochs: Vec<u64>,
    pub loss_target: Option<f64>,
    pub complete: bool,
    pub rejected_updates: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerMetrics {
    pub worker: WorkerId,
    pub iterations: u64,
    pub epochs: u64,
    pub wait: f64,
    pub compute: f64,
    pub comm: f64,
    /// From the worker's first pull to its last phase boundary.
    pub elapsed: f64,
    pub max_staleness: u64,
}

impl WorkerMetrics {
    fn zero(worker: WorkerId) -> Self {
        Self { worker, iterations: 0, epochs: 0, wait: 0.0, compute: 0.0, comm: 0.0, elapsed: 0.0, max_staleness: 0 }
    }

    /// `|elapsed − (wait + compute + comm)|`.
    pub fn accounting_residual(&self) -> f64 {
        (self.elapsed - (self.wait + self.compute + self.comm)).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub paradigm: String,
    pub workers: Vec<WorkerMetrics>,
    pub updates: u64,
    pub duration: f64,
    /// `staleness_histogram[s]` = number of updates with staleness `s`.
    pub staleness_histogram: Vec<u64>,
    pub loss_curve: Vec<LossPoint>,
    pub time_to_target: Option<f64>,
    pub final_loss: Option<f64>,
    pub regret: Option<RegretCurve>,
    pub complete: bool,
    pub rejected_updates: u64,
}

impl MetricsReport {
    pub fn max_staleness(&self) -> u64 {
        self.staleness_histogram.len().saturating_sub(1) as u64
    }

    pub fn worker(&self, p: WorkerId) -> &WorkerMetrics {
        &self.workers[p.0]
    }

    pub fn total_wait(&self) -> f64 {
        self.workers.iter().map(|w| w.wait).sum()
    }
}

/// Aggregates a trace and its run log into a report.
pub fn summarize(trace: &EventTrace, log: &RunLog) -> MetricsReport {
    let n = trace.worker_count().max(log.epochs.len());
    let mut workers: Vec<WorkerMetrics> = (0..n).map(|i| WorkerMetrics::zero(WorkerId(i))).collect();
    let mut start: Vec<Option<f64>> = vec![None; n];
    let mut mark: Vec<Option<(EventKind, f64)>> = vec![None; n];
    let mut boundary = vec![0.0; n];

    let staleness = update_staleness(trace);
    let mut histogram = Vec::new();
    let mut update_idx = 0;

    for e in trace.events() {
        let i = e.worker.0;
        let w = &mut workers[i];
        let prev = mark[i];
        match e.kind {
            EventKind::PullArrive => continue,
            EventKind::PullReturn => {
                match prev {
                    None => start[i] = Some(e.at),
                    Some((_, t)) => w.comm += e.at - t,
                }
            }
            EventKind::ComputeDone => {
                if let Some((_, t)) = prev {
                    w.compute += e.at - t;
                }
            }
            EventKind::PushArrive => {
                if let Some((_, t)) = prev {
                    w.comm += e.at - t;
                }
                w.iterations += 1;
                let s = staleness[update_idx];
                update_idx += 1;
                w.max_staleness = w.max_staleness.max(s);
                if histogram.len() <= s as usize {
                    histogram.resize(s as usize + 1, 0);
                }
                histogram[s as usize] += 1;
            }
            EventKind::GrantDeliver => {
                if let Some((_, t)) = prev {
                    w.wait += e.at - t;
                }
            }
        }
        mark[i] = Some((e.kind, e.at));
        boundary[i] = e.at;
    }
    for (i, w) in workers.iter_mut().enumerate() {
        if let Some(s) = start[i] {
            w.elapsed = boundary[i] - s;
        }
        w.epochs = log.epochs.get(i).copied().unwrap_or(0);
    }

    let time_to_target = log
        .loss_target
        .and_then(|target| log.loss_curve.iter().find(|p| p.loss <= target).map(|p| p.time));
    MetricsReport {
        paradigm: log.paradigm.clone(),
        workers,
        updates: trace.updates().count() as u64,
        duration: trace.events().iter().map(|e| e.at).fold(0.0, f64::max),
        staleness_histogram: histogram,
        loss_curve: log.loss_curve.clone(),
        time_to_target,
        final_loss: log.loss_curve.last().map(|p| p.loss),
        regret: None,
        complete: log.complete,
        rejected_updates: log.rejected_updates,
    }
}

/// Partial sums `R[T] = Σ_{t≤T} (f_t − f*)` and the averages `R[T]/T`.
/// Index `T − 1` holds the value after `T` updates.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretCurve {
    pub cumulative: Vec<f64>,
    pub average: Vec<f64>,
}

impl RegretCurve {
    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    /// `R[T]/T` for 1-based `t`.
    pub fn average_at(&self, t: usize) -> f64 {
        self.average[t - 1]
    }
}

/// Regret of the per-update losses against the optimum value.
pub fn compute_regret(kind: ModelKind, losses: &[f64], reference_optimum: f64) -> Result<RegretCurve, MetricsError> {
    if !kind.is_convex() {
        return Err(MetricsError::NonConvex(kind));
    }
    let mut sum = 0.0;
    let mut cumulative = Vec::with_capacity(losses.len());
    let mut average = Vec::with_capacity(losses.len());
    for (t, f) in losses.iter().enumerate() {
        sum += f - reference_optimum;
        cumulative.push(sum);
        average.push(sum / (t + 1) as f64);
    }
    Ok(RegretCurve { cumulative, average })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub weights: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: u64,
}

pub const REFERENCE_TOL: f64 = 1e-10;
const REFERENCE_MAX_STEPS: u64 = 2_000_000;

/// Full-batch gradient descent with step `1/L` from `start` until the
/// gradient norm drops below [`REFERENCE_TOL`]. Convex kinds only.
pub fn reference_optimum(model: &Model, dataset: &Dataset, start: &[f64]) -> Result<ReferenceSolution, MetricsError> {
    if !model.kind().is_convex() {
        return Err(MetricsError::NonConvex(model.kind()));
    }
    let step = 1.0 / smoothness_bound(model, dataset);
    let mut w = start.to_vec();
    for it in 0..REFERENCE_MAX_STEPS {
        let (loss, g) = model.loss_and_gradient(&w, &dataset.examples);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < REFERENCE_TOL {
            return Ok(ReferenceSolution { weights: w, loss, grad_norm: norm, iterations: it });
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= step * gi;
        }
    }
    let (_, g) = model.loss_and_gradient(&w, &dataset.examples);
    Err(MetricsError::NoConvergence {
        tol: REFERENCE_TOL,
        iterations: REFERENCE_MAX_STEPS,
        norm: g.iter().map(|v| v * v).sum::<f64>().sqrt(),
    })
}

/// Upper bound on the Hessian norm: 1 for the bowl, `λmax(XᵀX/n)` for
/// linear regression and a quarter of that for logistic regression. The
/// eigenvalue comes from power iteration and is padded by 5%.
fn smoothness_bound(model: &Model, dataset: &Dataset) -> f64 {
    let d = model.input_dim();
    let scale = match model.kind() {
        ModelKind::QuadraticBowl => return 1.0,
        ModelKind::LogisticRegression => 0.25,
        _ => 1.0,
    };
    let n = dataset.len().max(1) as f64;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..200 {
        let mut next = vec![0.0; d];
        for ex in &dataset.examples {
            let xv: f64 = ex.x.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (ni, xi) in next.iter_mut().zip(&ex.x) {
                *ni += xv * xi / n;
            }
        }
        lambda = next.iter().map(|a| a * a).sum::<f64>().sqrt();
        if lambda == 0.0 {
            return 1.0;
        }
        v = next.into_iter().map(|a| a / lambda).collect();
    }
    1.05 * scale * lambda
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn report_row(paradigm: &str, worker: &str, m: &WorkerMetrics, r: &MetricsReport) -> Vec<String> {
    vec![
        paradigm.to_string(),
        worker.to_string(),
        m.iterations.to_string(),
        m.epochs.to_string(),
        fmt_f64(m.wait),
        fmt_f64(m.compute),
        fmt_f64(m.comm),
        r.updates.to_string(),
        m.max_staleness.to_string(),
        r.time_to_target.map(fmt_f64).unwrap_or_default(),
        r.final_loss.map(fmt_f64).unwrap_or_default(),
    ]
}

/// Totals over all workers, in the shape of one worker row.
pub fn aggregate_row(r: &MetricsReport) -> WorkerMetrics {
    WorkerMetrics {
        worker: WorkerId(usize::MAX),
        iterations: r.workers.iter().map(|w| w.iterations).sum(),
        epochs: r.workers.iter().map(|w| w.epochs).min().unwrap_or(0),
        wait: r.workers.iter().map(|w| w.wait).sum(),
        compute: r.workers.iter().map(|w| w.compute).sum(),
        comm: r.workers.iter().map(|w| w.comm).sum(),
        elapsed: r.duration,
        max_staleness: r.max_staleness(),
    }
}

/// Writes the header plus, per report, one row per worker (if
/// `per_worker`) followed by the `all` row. `label` overrides the
/// paradigm column.
pub fn write_report_csv<W: Write>(
    out: W,
    reports: &[(String, &MetricsReport)],
    per_worker: bool,
) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for (label, r) in reports {
        if per_worker {
            for m in &r.workers {
                w.write_record(report_row(label, &m.worker.to_string(), m, r))?;
            }
        }
        w.write_record(report_row(label, "all", &aggregate_row(r), r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_loss_csv<W: Write>(out: W, curve: &[LossPoint]) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["update", "time_s", "loss"])?;
    for p in curve {
        w.write_record([p.update.to_string(), fmt_f64(p.time), fmt_f64(p.loss)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_regret_csv<W: Write>(out: W, curve: &RegretCurve) -> Result<(), MetricsError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["t", "regret", "avg_regret"])?;
    for (i, (r, a)) in curve.cumulative.iter().zip(&curve.average).enumerate() {
        w.write_record([(i + 1).to_string(), fmt_f64(*r), fmt_f64(*a)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{make_dataset, DataSpec};
    use crate::policy::GrantPath;
    use crate::simnet::{TraceDecision, TraceEvent};

    fn ev(at: f64, w: usize, kind: EventKind, t_p: u64, decision: TraceDecision) -> TraceEvent {
        TraceEvent { at, worker: WorkerId(w), kind, t_p, decision }
    }

    #[test]
    fn empty_trace_gives_zeroed_report() {
        let r = summarize(&EventTrace::new(), &RunLog::default());
        assert!(r.workers.is_empty());
        assert_eq!((r.updates, r.duration, r.max_staleness()), (0, 0.0, 0));
        assert!(r.staleness_histogram.is_empty());
        assert_eq!(r.final_loss, None);
    }

    #[test]
    fn phases_are_split_into_components() {
        use EventKind::*;
        let g = TraceDecision::Grant(GrantPath::Rule);
        let trace = EventTrace::from_events(vec![
            ev(0.5, 0, PullReturn, 0, TraceDecision::None),
            ev(1.5, 0, ComputeDone, 0, TraceDecision::None),
            ev(1.75, 0, PushArrive, 1, TraceDecision::Defer),
            ev(3.0, 0, GrantDeliver, 1, TraceDecision::Release),
            ev(3.25, 0, PullArrive, 1, TraceDecision::None),
            ev(3.5, 0, PullReturn, 1, TraceDecision::None),
            ev(4.5, 0, ComputeDone, 1, TraceDecision::None),
            ev(4.75, 0, PushArrive, 2, g),
            ev(4.75, 0, GrantDeliver, 2, TraceDecision::Ok),
        ]);
        let log = RunLog { epochs: vec![2], ..Default::default() };
        let r = summarize(&trace, &log);
        let w = r.worker(WorkerId(0));
        assert_eq!((w.compute, w.comm, w.wait, w.elapsed), (2.0, 1.0, 1.25, 4.25));
        assert_eq!(w.accounting_residual(), 0.0);
        assert_eq!((w.iterations, w.epochs), (2, 2));
        assert_eq!(r.staleness_histogram, vec![2]);
    }

    #[test]
    fn time_to_target_is_first_crossing() {
        let curve = vec![
            LossPoint { update: 0, time: 0.0, loss: 1.0 },
            LossPoint { update: 1, time: 2.0, loss: 0.4 },
            LossPoint { update: 2, time: 3.0, loss: 0.2 },
        ];
        let log = RunLog { loss_curve: curve, loss_target: Some(0.5), ..Default::default() };
        let r = summarize(&EventTrace::new(), &log);
        assert_eq!(r.time_to_target, Some(2.0));
        assert_eq!(r.final_loss, Some(0.2));
        let r = summarize(&EventTrace::new(), &RunLog { loss_target: Some(0.1), ..log });
        assert_eq!(r.time_to_target, None);
    }

    #[test]
    fn sampler_hits_multiples_and_final() {
        let mut s = LossSampler::new(3);
        for v in 0..=7 {
            s.observe(v, v as f64, || v as f64);
        }
        s.finish(7, 7.0, || 7.0);
        s.finish(7, 7.0, || 7.0);
        let got: Vec<u64> = s.points.iter().map(|p| p.update).collect();
        assert_eq!(got, vec![0, 3, 6, 7]);
    }

    #[test]
    fn regret_of_optimal_play_is_zero() {
        let c = compute_regret(ModelKind::LinearRegression, &[0.3; 5], 0.3).unwrap();
        assert!(c.cumulative.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn constant_excess_grows_linearly() {
        let c = compute_regret(ModelKind::LogisticRegression, &[1.5; 4], 1.0).unwrap();
        assert_eq!(c.cumulative, vec![0.5, 1.0, 1.5, 2.0]);
        assert!(c.average.iter().all(|&a| a == 0.5));
        assert!(matches!(
            compute_regret(ModelKind::TinyMlp, &[1.0], 0.0),
            Err(MetricsError::NonConvex(ModelKind::TinyMlp))
        ));
    }

    #[test]
    fn reference_optimum_reaches_tolerance() {
        for kind in [ModelKind::QuadraticBowl, ModelKind::LinearRegression, ModelKind::LogisticRegression] {
            let ds = make_dataset(DataSpec { kind, size: 256, input_dim: 4, hidden: 0, noise: 0.1, seed: 4 });
            let model = match kind {
                ModelKind::QuadraticBowl => Model::quadratic_bowl(ds.truth.clone()),
                ModelKind::LinearRegression => Model::linear_regression(4),
                _ => Model::logistic_regression(4),
            };
            let sol = reference_optimum(&model, &ds, &[0.0; 4]).unwrap();
            assert!(sol.grad_norm < REFERENCE_TOL, "{kind}");
        }
    }

    #[test]
    fn report_csv_layout() {
        let r = MetricsReport {
            paradigm: "ssp".into(),
            workers: vec![WorkerMetrics {
                worker: WorkerId(0),
                iterations: 3,
                epochs: 1,
                wait: 0.5,
                compute: 3.0,
                comm: 0.0,
                elapsed: 3.5,
                max_staleness: 1,
            }],
            updates: 3,
            duration: 3.5,
            staleness_histogram: vec![2, 1],
            loss_curve: vec![],
            time_to_target: None,
            final_loss: Some(0.25),
            regret: None,
            complete: true,
            rejected_updates: 0,
        };
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &[("ssp".to_string(), &r)], true).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "paradigm,worker,iterations,epochs,wait_s,compute_s,comm_s,updates_total,max_staleness,time_to_target_s,final_loss\n\
             ssp,0,3,1,0.5,3,0,3,1,,0.25\n\
             ssp,all,3,1,0.5,3,0,3,1,,0.25\n"
        );
    }
}
