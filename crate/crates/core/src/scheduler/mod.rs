//! Orchestration decisions: sharing policies, batch placement and preemption.
//!
//! Everything here is a pure function over snapshots; callers own the state
//! and apply the results.

pub mod placement;
pub mod policy;
pub mod preemption;

pub use placement::{
    best_fit, place_batch, queue_order, verify_plan, NodeCandidate, PlacementPlan, PlannedPlacement, SkipReason,
};
pub use policy::{compute_policy, ran_shift_requires_policy, PolicyDecision, SharingPolicy};
pub use preemption::{select_preemption_victims, select_quota_victims, PreemptionError};
