//! Domain types shared by the orchestrator, the sites and the simulator.

pub mod ids;
pub mod job;
pub mod resources;
pub mod snapshot;
pub mod workload;

pub use ids::{NodeId, SimTime, SiteId, TenantId, WorkloadId};
pub use job::{HistoryEntry, JobRecord, JobState, LifecycleEvent, Placement, TransitionError};
pub use resources::{rv_add, rv_fits, rv_sub_saturating, ResourceError, ResourceVector};
pub use snapshot::{Allocation, Intent, NodeSpec, SiteSnapshot};
pub use workload::{Elasticity, Target, WorkloadClass, WorkloadDescriptor, MAX_PRIORITY};
