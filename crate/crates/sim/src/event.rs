use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use asyncrl_core::types::{PromptId, Tick, VersionId};
use serde::{Deserialize, Serialize};

/// Event kinds in tie-break order: at equal times, lower variants run first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PrefillDone,
    SampleDone,
    Migration,
    GroupGraded,
    LogpRecomputeDone,
    TrainDone,
    SyncDone,
    RoleSwitchDone,
    BatchReady,
}

impl EventKind {
    pub fn rank(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            EventKind::PrefillDone => "prefill_done",
            EventKind::SampleDone => "sample_done",
            EventKind::Migration => "migration",
            EventKind::GroupGraded => "group_graded",
            EventKind::LogpRecomputeDone => "logp_recompute_done",
            EventKind::TrainDone => "train_done",
            EventKind::SyncDone => "sync_done",
            EventKind::RoleSwitchDone => "role_switch_done",
            EventKind::BatchReady => "batch_ready",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    /// A sample event; stale when `epoch` no longer matches the sample.
    Sample { index: usize, epoch: u32 },
    Prompt { prompt: PromptId, attempt: u32 },
    Version(VersionId),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time: Tick,
    pub kind: EventKind,
    pub seq: u64,
    pub payload: Payload,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.kind.rank(), self.seq).cmp(&(other.time, other.kind.rank(), other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue ordered by `(time, kind rank, sequence id)`.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: Tick, kind: EventKind, payload: Payload) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Event {
            time,
            kind,
            seq,
            payload,
        }));
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop().map(|Reverse(e)| e)
    }

    pub fn peek_time(&self) -> Option<Tick> {
        self.heap.peek().map(|Reverse(e)| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_break_by_rank_then_sequence() {
        let mut q = EventQueue::default();
        q.push(5, EventKind::TrainDone, Payload::None);
        q.push(5, EventKind::SampleDone, Payload::Sample { index: 1, epoch: 0 });
        q.push(3, EventKind::BatchReady, Payload::None);
        q.push(5, EventKind::SampleDone, Payload::Sample { index: 0, epoch: 0 });
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| (e.time, e.kind, e.seq)).collect();
        assert_eq!(
            order,
            vec![
                (3, EventKind::BatchReady, 2),
                (5, EventKind::SampleDone, 1),
                (5, EventKind::SampleDone, 3),
                (5, EventKind::TrainDone, 0),
            ]
        );
    }
}
