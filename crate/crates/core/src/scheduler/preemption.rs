//! Victim selection when RAN demand (or a shrinking quota) needs AI capacity back.

use std::cmp::Ordering;

use thiserror::Error;

use crate::model::{Allocation, ResourceVector, SiteSnapshot, WorkloadId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PreemptionError {
    /// Evicting every AI workload still leaves the requirement uncovered.
    #[error("infrastructure alarm: need {needed}, at most {reclaimable} reclaimable")]
    InfrastructureAlarm {
        needed: ResourceVector,
        reclaimable: ResourceVector,
    },
}

/// Eviction order: lowest priority first, then most recently admitted,
/// then largest grant (normalized by site capacity), then id.
pub fn victim_order(a: &Allocation, b: &Allocation, capacity: &ResourceVector) -> Ordering {
    a.priority
        .cmp(&b.priority)
        .then_with(|| b.admitted_at.total_cmp(&a.admitted_at))
        .then_with(|| {
            b.granted
                .normalized_sum(capacity)
                .total_cmp(&a.granted.normalized_sum(capacity))
        })
        .then_with(|| a.workload_id.cmp(&b.workload_id))
}

/// AI allocations of `snapshot` in eviction order.
pub fn ordered_ai_allocations(snapshot: &SiteSnapshot) -> Vec<&Allocation> {
    let capacity = snapshot.total_capacity();
    let mut ai: Vec<&Allocation> = snapshot
        .iter_allocations()
        .map(|(_, a)| a)
        .filter(|a| a.class.is_ai())
        .collect();
    ai.sort_by(|a, b| victim_order(a, b, &capacity));
    ai
}

fn covering_prefix(
    ordered: &[&Allocation],
    already: ResourceVector,
    needed: &ResourceVector,
) -> Result<Vec<WorkloadId>, PreemptionError> {
    let mut released = already;
    let mut victims = Vec::new();
    for a in ordered {
        if needed.fits_in(&released) {
            return Ok(victims);
        }
        released = released.saturating_add(&a.granted);
        victims.push(a.workload_id.clone());
    }
    if needed.fits_in(&released) {
        Ok(victims)
    } else {
        Err(PreemptionError::InfrastructureAlarm {
            needed: *needed,
            reclaimable: released,
        })
    }
}

/// Shortest prefix of the eviction order whose released grants, together
/// with the site's free capacity, cover `needed`. Empty when free capacity
/// already suffices. RAN allocations are never candidates.
pub fn select_preemption_victims(
    snapshot: &SiteSnapshot,
    needed: &ResourceVector,
) -> Result<Vec<WorkloadId>, PreemptionError> {
    covering_prefix(&ordered_ai_allocations(snapshot), snapshot.free(), needed)
}

/// Shortest eviction prefix that brings the AI allocation back within `quota`.
pub fn select_quota_victims(
    snapshot: &SiteSnapshot,
    quota: &ResourceVector,
) -> Result<Vec<WorkloadId>, PreemptionError> {
    let excess = snapshot.ai_allocated().saturating_sub(quota);
    covering_prefix(&ordered_ai_allocations(snapshot), ResourceVector::ZERO, &excess)
}
