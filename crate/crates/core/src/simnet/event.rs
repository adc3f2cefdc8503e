use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use crate::config::{Timestamp, WorkerId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    ComputeDone,
    PushArrive,
    GrantDeliver,
    PullArrive,
    PullReturn,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::ComputeDone => "compute_done",
            EventKind::PushArrive => "push_arrive",
            EventKind::GrantDeliver => "grant_deliver",
            EventKind::PullArrive => "pull_arrive",
            EventKind::PullReturn => "pull_return",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "compute_done" => Ok(EventKind::ComputeDone),
            "push_arrive" => Ok(EventKind::PushArrive),
            "grant_deliver" => Ok(EventKind::GrantDeliver),
            "pull_arrive" => Ok(EventKind::PullArrive),
            "pull_return" => Ok(EventKind::PullReturn),
            other => Err(format!("unknown event kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub at: Timestamp,
    pub kind: EventKind,
    pub worker: WorkerId,
    pub seq: u64,
}

impl Eq for Event {}

impl Ord for Event {
    /// Reversed so the max-heap pops the earliest `(at, seq)` first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.total_cmp(&self.at).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Pending events in `(at, seq)` order. `seq` is assigned on insertion.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(&mut self, at: Timestamp, kind: EventKind, worker: WorkerId) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { at, kind, worker, seq });
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn peek(&self) -> Option<&Event> {
        self.heap.peek()
    }

    /// Pops the next event only if it matches `kind` at exactly `at`.
    pub fn pop_if(&mut self, at: Timestamp, kind: EventKind) -> Option<Event> {
        match self.heap.peek() {
            Some(e) if e.kind == kind && e.at == at => self.heap.pop(),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
