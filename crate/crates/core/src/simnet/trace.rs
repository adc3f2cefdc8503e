//! Ordered event record shared by the simulator and the threaded runner.
//!
//! Text form is one header line followed by one line per event:
//!
//! ```text
//! time<TAB>worker<TAB>kind<TAB>t_p<TAB>decision
//! ```
//!
//! `time` is printed with the shortest representation that parses back to
//! the same `f64`. `t_p` is the worker's push count at that instant (after
//! the increment on `push_arrive`). `decision` is one of `grant`, `credit`,
//! `mint:<r>`, `defer` on `push_arrive`, `ok` or `release` on
//! `grant_deliver`, and `-` elsewhere.

use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

use crate::config::{IterationCount, Timestamp, WorkerId};
use crate::policy::{GrantPath, Outcome, SyncDecision};

use super::event::EventKind;

pub const TRACE_HEADER: &str = "time\tworker\tkind\tt_p\tdecision";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceDecision {
    None,
    Grant(GrantPath),
    Defer,
    /// The pusher's own OK.
    Ok,
    /// OK for a parked worker, triggered by someone else's push or retirement.
    Release,
}

impl TraceDecision {
    pub fn from_sync(d: &SyncDecision) -> Self {
        match d.outcome {
            Outcome::Grant => TraceDecision::Grant(d.path),
            Outcome::Defer => TraceDecision::Defer,
        }
    }

    pub fn is_grant(self) -> bool {
        matches!(self, TraceDecision::Grant(_) | TraceDecision::Release)
    }
}

impl fmt::Display for TraceDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceDecision::None => f.write_str("-"),
            TraceDecision::Grant(GrantPath::Rule) => f.write_str("grant"),
            TraceDecision::Grant(GrantPath::Credit) => f.write_str("credit"),
            TraceDecision::Grant(GrantPath::Minted(r)) => write!(f, "mint:{r}"),
            TraceDecision::Defer => f.write_str("defer"),
            TraceDecision::Ok => f.write_str("ok"),
            TraceDecision::Release => f.write_str("release"),
        }
    }
}

impl std::str::FromStr for TraceDecision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "-" => TraceDecision::None,
            "grant" => TraceDecision::Grant(GrantPath::Rule),
            "credit" => TraceDecision::Grant(GrantPath::Credit),
            "defer" => TraceDecision::Defer,
            "ok" => TraceDecision::Ok,
            "release" => TraceDecision::Release,
            other => match other.strip_prefix("mint:").map(str::parse) {
                Some(Ok(r)) => TraceDecision::Grant(GrantPath::Minted(r)),
                _ => return Err(format!("unknown decision '{other}'")),
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEvent {
    pub at: Timestamp,
    pub worker: WorkerId,
    pub kind: EventKind,
    pub t_p: IterationCount,
    pub decision: TraceDecision,
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceParseError {
    #[error("missing or wrong header line")]
    Header,
    #[error("line {line}: {reason}")]
    Row { line: usize, reason: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTrace {
    events: Vec<TraceEvent>,
}

impl EventTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: Vec<TraceEvent>) -> Self {
        Self { events }
    }

    pub fn push(&mut self, ev: TraceEvent) {
        self.events.push(ev);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One past the largest worker id that appears.
    pub fn worker_count(&self) -> usize {
        self.events.iter().map(|e| e.worker.0 + 1).max().unwrap_or(0)
    }

    /// Rows of applied updates (`push_arrive`), in application order.
    pub fn updates(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(|e| e.kind == EventKind::PushArrive)
    }

    /// Stable sort by time; used by the threaded runner whose rows are
    /// appended slightly out of order.
    pub(crate) fn sort_by_time(&mut self) {
        self.events.sort_by(|a, b| a.at.total_cmp(&b.at));
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for e in &self.events {
            writeln!(out, "{}\t{}\t{}\t{}\t{}", e.at, e.worker, e.kind, e.t_p, e.decision)?;
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("trace is ASCII")
    }

    pub fn parse(text: &str) -> Result<Self, TraceParseError> {
        let mut lines = text.lines();
        if lines.next() != Some(TRACE_HEADER) {
            return Err(TraceParseError::Header);
        }
        let mut events = Vec::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let row = |reason: String| TraceParseError::Row { line: line_no, reason };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(row(format!("expected 5 fields, got {}", f.len())));
            }
            events.push(TraceEvent {
                at: f[0].parse().map_err(|_| row(format!("bad time '{}'", f[0])))?,
                worker: WorkerId(f[1].parse().map_err(|_| row(format!("bad worker '{}'", f[1])))?),
                kind: f[2].parse().map_err(row)?,
                t_p: f[3].parse().map_err(|_| row(format!("bad t_p '{}'", f[3])))?,
                decision: f[4].parse().map_err(row)?,
            });
        }
        Ok(Self { events })
    }
}

/// Staleness of every update in order: `max_i t_i − t_p` right after the
/// update from `p` was counted.
pub fn update_staleness(trace: &EventTrace) -> Vec<u64> {
    let mut counts = vec![0u64; trace.worker_count()];
    let mut max = 0;
    trace
        .updates()
        .map(|e| {
            counts[e.worker.0] = e.t_p;
            max = max.max(e.t_p);
            max - e.t_p
        })
        .collect()
}

/// Staleness of the `update_index`-th applied update (0-based).
pub fn staleness_of_update(trace: &EventTrace, update_index: usize) -> u64 {
    update_staleness(trace)[update_index]
}

/// Largest clock spread seen at any grant instant.
///
/// The spread is the largest push count over all workers minus the smallest
/// over workers that still have pushes to make. A worker stops counting
/// towards the minimum right after its last `push_arrive` row.
pub fn max_grant_spread(trace: &EventTrace) -> u64 {
    let n = trace.worker_count();
    let mut last_push = vec![None; n];
    for (i, e) in trace.events().iter().enumerate() {
        if e.kind == EventKind::PushArrive {
            last_push[e.worker.0] = Some(i);
        }
    }
    let mut counts = vec![0u64; n];
    let mut retired = vec![false; n];
    let mut worst = 0;
    for (i, e) in trace.events().iter().enumerate() {
        if e.kind == EventKind::PushArrive {
            counts[e.worker.0] = e.t_p;
        }
        if e.decision.is_grant() {
            let max = counts.iter().copied().max().unwrap_or(0);
            let min = (0..n).filter(|&w| !retired[w]).map(|w| counts[w]).min();
            if let Some(min) = min {
                worst = worst.max(max - min);
            }
        }
        if last_push[e.worker.0] == Some(i) {
            retired[e.worker.0] = true;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(at: f64, w: usize, kind: EventKind, t_p: u64, decision: TraceDecision) -> TraceEvent {
        TraceEvent { at, worker: WorkerId(w), kind, t_p, decision }
    }

    fn sample() -> EventTrace {
        use EventKind::*;
        EventTrace::from_events(vec![
            ev(0.0, 0, PullReturn, 0, TraceDecision::None),
            ev(0.0, 1, PullReturn, 0, TraceDecision::None),
            ev(0.1, 0, ComputeDone, 0, TraceDecision::None),
            ev(0.30000000000000004, 0, PushArrive, 1, TraceDecision::Grant(GrantPath::Minted(3))),
            ev(0.30000000000000004, 0, GrantDeliver, 1, TraceDecision::Ok),
            ev(1.5, 1, PushArrive, 1, TraceDecision::Defer),
            ev(2.0, 0, PushArrive, 2, TraceDecision::Grant(GrantPath::Credit)),
            ev(2.0, 1, GrantDeliver, 1, TraceDecision::Release),
        ])
    }

    #[test]
    fn tsv_round_trip_is_exact() {
        let t = sample();
        let text = t.to_tsv();
        assert!(text.starts_with("time\tworker\tkind\tt_p\tdecision\n"));
        assert!(text.contains("0.30000000000000004\t0\tpush_arrive\t1\tmint:3\n"));
        assert_eq!(EventTrace::parse(&text).unwrap(), t);
    }

    #[test]
    fn parse_rejects_garbage() {
        assert_eq!(EventTrace::parse("nope"), Err(TraceParseError::Header));
        let bad = format!("{TRACE_HEADER}\n1\t0\tpush_arrive\t1\n");
        assert!(matches!(EventTrace::parse(&bad), Err(TraceParseError::Row { line: 2, .. })));
        let bad = format!("{TRACE_HEADER}\n1\t0\tteleport\t1\t-\n");
        assert!(matches!(EventTrace::parse(&bad), Err(TraceParseError::Row { line: 2, .. })));
    }

    #[test]
    fn staleness_relative_to_frontier() {
        let t = sample();
        assert_eq!(update_staleness(&t), vec![0, 0, 0]);
        let t = EventTrace::from_events(vec![
            ev(1.0, 0, EventKind::PushArrive, 1, TraceDecision::Grant(GrantPath::Rule)),
            ev(2.0, 0, EventKind::PushArrive, 2, TraceDecision::Grant(GrantPath::Rule)),
            ev(3.0, 1, EventKind::PushArrive, 1, TraceDecision::Grant(GrantPath::Rule)),
        ]);
        assert_eq!(staleness_of_update(&t, 2), 1);
    }

    #[test]
    fn spread_ignores_finished_workers() {
        use EventKind::PushArrive;
        let g = TraceDecision::Grant(GrantPath::Rule);
        // Worker 1 finishes after one push; later grants to worker 0 do not
        // count it as the slowest.
        let t = EventTrace::from_events(vec![
            ev(1.0, 1, PushArrive, 1, g),
            ev(2.0, 0, PushArrive, 1, g),
            ev(3.0, 0, PushArrive, 2, g),
            ev(4.0, 0, PushArrive, 3, g),
        ]);
        // Without retirement the last grant would see 3 - 1 = 2.
        assert_eq!(max_grant_spread(&t), 1);
    }
}
