//! Pure decision rules used by the simulator at training boundaries.

use std::collections::{BTreeMap, BTreeSet};

use asyncrl_core::pipeline::StalenessPolicy;
use asyncrl_core::types::VersionId;
use serde::{Deserialize, Serialize};

use crate::config::SchedulerMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disposition {
    /// Keep generating under the sample's own version with its KV-cache.
    ContinueSameVersion,
    /// Keep the version but move to another device, shipping the KV-cache.
    MigrateWithCache,
    /// Too stale to ever be trained on; drop and regenerate the prompt.
    DiscardRegenerate,
    /// Rebase onto the newest version, re-prefilling prompt and prefix.
    ReprefillNewest,
}

/// Decides what happens to an in-flight sample generated under `version`
/// once `newest` exists. `must_move` marks samples whose device is leaving
/// the generator role.
pub fn interrupt_policy(
    mode: SchedulerMode,
    version: VersionId,
    newest: VersionId,
    policy: &StalenessPolicy,
    must_move: bool,
) -> Disposition {
    match mode {
        SchedulerMode::NaivePartial if version < newest => Disposition::ReprefillNewest,
        SchedulerMode::Dora if newest.saturating_sub(version) > policy.max_staleness => {
            Disposition::DiscardRegenerate
        }
        _ if must_move => Disposition::MigrateWithCache,
        _ => Disposition::ContinueSameVersion,
    }
}

/// Versions to drop: unreferenced, older than the staleness window, and
/// never the newest.
pub fn evict_versions(
    resident: &BTreeSet<VersionId>,
    references: &BTreeMap<VersionId, usize>,
    newest: VersionId,
    policy: &StalenessPolicy,
) -> Vec<VersionId> {
    let window_start = newest.saturating_sub(policy.max_staleness);
    resident
        .iter()
        .copied()
        .filter(|&v| v != newest && v < window_start && references.get(&v).copied().unwrap_or(0) == 0)
        .collect()
}

/// Ticks to move a sample holding `cached_tokens` of KV-cache, plus a weight
/// transfer when the target device lacks the sample's version.
pub fn migration_cost(cached_tokens: u64, kv_transfer_rate: u64, needs_weights: bool, weight_transfer_ticks: u64) -> u64 {
    cached_tokens.div_ceil(kv_transfer_rate) + if needs_weights { weight_transfer_ticks } else { 0 }
}

/// Pairs over-threshold sources with receivers in index order.
///
/// `waiting[d]` counts samples parked on device `d`; `free[d]` counts slots
/// it can accept now. Returns `(from, to)` moves, one per migrated sample.
pub fn load_balance(waiting: &[usize], free: &[usize], threshold: usize) -> Vec<(usize, usize)> {
    let mut free = free.to_vec();
    let mut moves = Vec::new();
    for (from, &w) in waiting.iter().enumerate() {
        if w < threshold {
            continue;
        }
        for _ in 0..w {
            let target = (0..free.len())
                .filter(|&d| d != from && free[d] > 0)
                .max_by(|&a, &b| free[a].cmp(&free[b]).then(b.cmp(&a)));
            match target {
                Some(to) => {
                    free[to] -= 1;
                    moves.push((from, to));
                }
                None => return moves,
            }
        }
    }
    moves
}
