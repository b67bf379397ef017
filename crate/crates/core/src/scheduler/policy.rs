use serde::{Deserialize, Serialize};

use crate::model::{Intent, ResourceVector, SimTime, SiteId, SiteSnapshot};

/// Per-site split of capacity between a RAN reserve and an AI quota.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingPolicy {
    pub site_id: SiteId,
    pub version: u64,
    pub ran_reserve: ResourceVector,
    pub ai_quota: ResourceVector,
    pub preemption_enabled: bool,
    pub issued_at: SimTime,
}

impl SharingPolicy {
    pub fn new(
        site_id: SiteId,
        version: u64,
        ran_reserve: ResourceVector,
        ai_quota: ResourceVector,
        preemption_enabled: bool,
        issued_at: SimTime,
    ) -> Self {
        Self {
            site_id,
            version,
            ran_reserve,
            ai_quota,
            preemption_enabled,
            issued_at,
        }
    }

    /// The policy a site runs with before the orchestrator has spoken:
    /// everything reserved for RAN, nothing for AI.
    pub fn cold_start(site_id: SiteId, capacity: ResourceVector) -> Self {
        Self::new(site_id, 0, capacity, ResourceVector::ZERO, true, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub policy: SharingPolicy,
    /// RAN demand alone exceeds the site's capacity.
    pub alarm: bool,
}

/// Computes a site's sharing policy.
///
/// `ran_reserve = ran_demand + headroom * capacity`, clipped to capacity, and
/// `ai_quota = capacity - ran_reserve`. Sites outside the intent's AI-enabled
/// set get a zero quota. The version is one past the larger of the site's
/// applied version and the last version issued for it.
pub fn compute_policy(snapshot: &SiteSnapshot, intent: &Intent, last_issued: u64, now: SimTime) -> PolicyDecision {
    let capacity = snapshot.total_capacity();
    let headroom = capacity.scale(intent.ran_headroom_fraction.clamp(0.0, 1.0));
    let alarm = !snapshot.ran_demand.fits_in(&capacity);
    let ran_reserve = snapshot.ran_demand.saturating_add(&headroom).component_min(&capacity);
    let ai_quota = if alarm || !intent.ai_enabled_sites.contains(&snapshot.site_id) {
        ResourceVector::ZERO
    } else {
        capacity.saturating_sub(&ran_reserve)
    };
    let version = snapshot.policy_version.max(last_issued) + 1;
    PolicyDecision {
        policy: SharingPolicy::new(snapshot.site_id.clone(), version, ran_reserve, ai_quota, true, now),
        alarm,
    }
}

/// Whether telemetry moved RAN demand far enough to re-issue the policy:
/// any component changed by at least `fraction` of the site's capacity.
pub fn ran_shift_requires_policy(
    previous: &ResourceVector,
    current: &ResourceVector,
    capacity: &ResourceVector,
    fraction: f64,
) -> bool {
    let (p, c, cap) = (previous.components(), current.components(), capacity.components());
    (0..p.len()).any(|i| {
        let delta = p[i].abs_diff(c[i]) as f64;
        cap[i] > 0 && delta >= fraction * cap[i] as f64
    })
}
