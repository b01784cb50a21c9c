use asyncrl_core::types::{PromptId, Tick, VersionId};
use serde::{Deserialize, Serialize};

use crate::config::SchedulerMode;

/// One line of the event trace. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: Tick,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prompt: Option<PromptId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sample: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub version: Option<VersionId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub value: Option<u64>,
}

/// Re-prefilled tokens split by what caused them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReprefillLedger {
    /// Regenerated attempts re-reading a prompt whose KV was computed before.
    pub regenerate: u64,
    /// Samples rebased onto a newer version.
    pub interrupt: u64,
    /// Samples moved to another device without their KV-cache.
    pub migration: u64,
}

impl ReprefillLedger {
    pub fn total(&self) -> u64 {
        self.regenerate + self.interrupt + self.migration
    }
}

/// Where every dispatched prompt attempt ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PromptLedger {
    pub attempts_dispatched: u64,
    pub consumed: u64,
    pub filtered: u64,
    /// Discarded in flight or expired while waiting, then resubmitted.
    pub regenerated: u64,
    pub in_flight_at_end: u64,
    pub awaiting_grade_at_end: u64,
    pub awaiting_batch_at_end: u64,
    pub distinct_prompts: u64,
}

impl PromptLedger {
    pub fn balanced(&self) -> bool {
        self.attempts_dispatched
            == self.consumed
                + self.filtered
                + self.regenerated
                + self.in_flight_at_end
                + self.awaiting_grade_at_end
                + self.awaiting_batch_at_end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InvariantCounters {
    /// Finished samples whose tokens span more than one version.
    pub version_consistency_violations: u64,
    /// Trained samples beyond the staleness bound.
    pub staleness_violations: u64,
    pub max_live_versions: u64,
    pub live_version_cap_violations: u64,
    /// Emitted groups where every graded sample passed or every one failed.
    pub uniform_groups_emitted: u64,
    /// Generation events on older versions between a training step's end and its sync.
    pub old_version_events_during_sync: u64,
    /// Generation events of any version between a training step's end and its sync.
    pub generation_events_during_sync: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhaseBreakdown {
    pub role_switch: Tick,
    pub recompute: Tick,
    pub train: Tick,
    pub sync: Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mode: SchedulerMode,
    pub seed: u64,
    pub end_tick: Tick,
    pub batches: u64,
    pub trained_samples: u64,
    pub trained_tokens: u64,
    pub batches_per_tick: f64,
    pub samples_per_tick: f64,
    pub tokens_per_tick: f64,
    pub prefill_tokens: u64,
    pub decode_tokens: u64,
    pub wasted_decode_tokens: u64,
    pub reprefill_tokens: u64,
    pub reprefill: ReprefillLedger,
    pub migrations: u64,
    pub kv_transfer_tokens: u64,
    pub interruptions: u64,
    pub discarded_samples: u64,
    pub idle_fraction: f64,
    pub idle_fraction_standalone: f64,
    pub idle_fraction_elastic: f64,
    /// `histogram[s]` counts trained samples with staleness `s`.
    pub staleness_histogram: Vec<u64>,
    pub phases: PhaseBreakdown,
    pub prompts: PromptLedger,
    pub invariants: InvariantCounters,
    pub versions_created: u64,
    pub versions_evicted: u64,
    pub in_flight_samples_at_end: u64,
}

impl SimReport {
    pub fn empty(mode: SchedulerMode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            end_tick: 0,
            batches: 0,
            trained_samples: 0,
            trained_tokens: 0,
            batches_per_tick: 0.0,
            samples_per_tick: 0.0,
            tokens_per_tick: 0.0,
            prefill_tokens: 0,
            decode_tokens: 0,
            wasted_decode_tokens: 0,
            reprefill_tokens: 0,
            reprefill: ReprefillLedger::default(),
            migrations: 0,
            kv_transfer_tokens: 0,
            interruptions: 0,
            discarded_samples: 0,
            idle_fraction: 0.0,
            idle_fraction_standalone: 0.0,
            idle_fraction_elastic: 0.0,
            staleness_histogram: Vec::new(),
            phases: PhaseBreakdown::default(),
            prompts: PromptLedger::default(),
            invariants: InvariantCounters::default(),
            versions_created: 0,
            versions_evicted: 0,
            in_flight_samples_at_end: 0,
        }
    }
}
