//! Job lifecycle state machine.
//!
//! ```text
//! Submitted -> Validated -> Queued -> Scheduled -> Deploying -> Running -> Completed
//! Running -> Preempted -> Queued          (batch)
//! Running -> Preempted -> Terminated      (real-time)
//! Submitted | Validated -> Rejected
//! Queued -> Rejected                      (deadline expired)
//! Scheduled | Deploying -> Queued         (site refusal, transport failure)
//! any -> Failed
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ids::{NodeId, SimTime, SiteId};
use super::resources::ResourceVector;
use super::workload::{WorkloadClass, WorkloadDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Submitted,
    Validated,
    Queued,
    Scheduled,
    Deploying,
    Running,
    Completed,
    Preempted,
    Terminated,
    Rejected,
    Failed,
}

impl JobState {
    pub fn holds_placement(self) -> bool {
        matches!(self, JobState::Scheduled | JobState::Deploying | JobState::Running)
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            JobState::Completed | JobState::Terminated | JobState::Rejected | JobState::Failed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub site_id: SiteId,
    pub node_id: NodeId,
    pub granted: ResourceVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleEvent {
    Validate,
    Enqueue,
    Schedule(Placement),
    Deploy,
    /// Site acknowledged; carries the grant actually allocated.
    Start {
        granted: ResourceVector,
    },
    Complete,
    Preempt,
    Requeue,
    Terminate,
    Reject,
    Fail,
}

impl LifecycleEvent {
    fn name(&self) -> &'static str {
        match self {
            LifecycleEvent::Validate => "validate",
            LifecycleEvent::Enqueue => "enqueue",
            LifecycleEvent::Schedule(_) => "schedule",
            LifecycleEvent::Deploy => "deploy",
            LifecycleEvent::Start { .. } => "start",
            LifecycleEvent::Complete => "complete",
            LifecycleEvent::Preempt => "preempt",
            LifecycleEvent::Requeue => "requeue",
            LifecycleEvent::Terminate => "terminate",
            LifecycleEvent::Reject => "reject",
            LifecycleEvent::Fail => "fail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransitionError {
    #[error("illegal transition: event `{event}` in state {from:?} for {class:?} job")]
    Illegal {
        from: JobState,
        event: &'static str,
        class: WorkloadClass,
    },
    #[error("grant {granted} violates the workload's elasticity bounds")]
    GrantOutOfBounds { granted: ResourceVector },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub at: SimTime,
    pub from: JobState,
    pub to: JobState,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub workload: WorkloadDescriptor,
    pub state: JobState,
    pub placement: Option<Placement>,
    pub history: Vec<HistoryEntry>,
    /// Sites the submitting tenant's token grants; placement never leaves this set.
    #[serde(default)]
    pub granted_sites: BTreeSet<SiteId>,
    /// Submission order, used as the FIFO tie-breaker.
    #[serde(default)]
    pub seq: u64,
}

/// Pure transition lookup. Returns the next state or the violation.
pub fn next_state(from: JobState, event: &LifecycleEvent, class: WorkloadClass) -> Result<JobState, TransitionError> {
    use JobState::*;
    use LifecycleEvent as E;
    let to = match (from, event) {
        (_, E::Fail) => Some(Failed),
        (Submitted, E::Validate) => Some(Validated),
        (Validated, E::Enqueue) => Some(Queued),
        (Queued, E::Schedule(_)) => Some(Scheduled),
        (Scheduled, E::Deploy) => Some(Deploying),
        (Deploying, E::Start { .. }) => Some(Running),
        (Running, E::Complete) => Some(Completed),
        (Running, E::Preempt) if class != WorkloadClass::Ran => Some(Preempted),
        (Preempted, E::Requeue) if class == WorkloadClass::AiBatch => Some(Queued),
        (Preempted, E::Terminate) if class == WorkloadClass::AiRealtime => Some(Terminated),
        (Scheduled | Deploying, E::Requeue) => Some(Queued),
        (Submitted | Validated | Queued, E::Reject) => Some(Rejected),
        _ => None,
    };
    to.ok_or(TransitionError::Illegal {
        from,
        event: event.name(),
        class,
    })
}

impl JobRecord {
    pub fn new(workload: WorkloadDescriptor, granted_sites: BTreeSet<SiteId>, seq: u64) -> Self {
        Self {
            workload,
            state: JobState::Submitted,
            placement: None,
            history: Vec::new(),
            granted_sites,
            seq,
        }
    }

    /// Applies `event` at `now`. On error the record is left untouched.
    pub fn transition(
        &mut self,
        event: LifecycleEvent,
        now: SimTime,
        reason: impl Into<String>,
    ) -> Result<JobState, TransitionError> {
        let to = next_state(self.state, &event, self.workload.class)?;
        match event {
            LifecycleEvent::Schedule(placement) => {
                if !self.workload.elasticity.admits_grant(&placement.granted) {
                    return Err(TransitionError::GrantOutOfBounds {
                        granted: placement.granted,
                    });
                }
                self.placement = Some(placement);
            }
            LifecycleEvent::Start { granted } => {
                if !self.workload.elasticity.admits_grant(&granted) {
                    return Err(TransitionError::GrantOutOfBounds { granted });
                }
                if let Some(p) = self.placement.as_mut() {
                    p.granted = granted;
                }
            }
            _ => {}
        }
        if !to.holds_placement() {
            self.placement = None;
        }
        self.history.push(HistoryEntry {
            at: now,
            from: self.state,
            to,
            reason: reason.into(),
        });
        self.state = to;
        Ok(to)
    }

    /// Functional form of [`JobRecord::transition`].
    pub fn job_transition(
        mut self,
        event: LifecycleEvent,
        now: SimTime,
        reason: impl Into<String>,
    ) -> Result<JobRecord, TransitionError> {
        self.transition(event, now, reason)?;
        Ok(self)
    }
}
