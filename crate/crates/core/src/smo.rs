//! The AI-SMO orchestrator: tenant authentication, workload validation,
//! batch intake and lifecycle ownership, the global view built from site
//! telemetry, policy dissemination and advice after real-time rejections.
//!
//! Like the site, the orchestrator is sans-I/O. Northbound calls return
//! their reply directly; southbound messages accumulate in an outbox of
//! `(site, payload)` pairs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{AuthToken, TokenError, TokenSigner};
use crate::model::{
    Allocation, Intent, JobRecord, JobState, LifecycleEvent, Placement, ResourceVector, SimTime, SiteId, SiteSnapshot,
    TenantId, WorkloadClass, WorkloadDescriptor, WorkloadId, MAX_PRIORITY,
};
use crate::o2::{
    AdviceReply, AdviceRequest, AuthReply, AuthRequest, CapacityReply, DeployOutcome, DeployRequest, DeployResult,
    ErrorReply, JobStatusReply, Payload, PreemptDisposition, PreemptNotice, RtOutcome, RtResult, SubmitReply,
    TelemetryReport, ValidateReply,
};
use crate::scheduler::{compute_policy, place_batch, ran_shift_requires_policy, PlacementPlan, SharingPolicy};
use crate::site::{RtRejectReason, SiteConfig};

/// Longest token lifetime the orchestrator will issue, in sim-seconds.
pub const MAX_TOKEN_LIFETIME: SimTime = 3600.0;

/// RAN demand shift, as a fraction of site capacity, that forces a new policy.
pub const POLICY_SHIFT_FRACTION: f64 = 0.05;

/// A deployment unacknowledged for this long is sent again.
pub const DEPLOY_RETRY_AFTER: SimTime = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Standing {
    Active,
    Suspended,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TenantRecord {
    pub tenant_id: TenantId,
    pub credential: String,
    #[serde(default)]
    pub default_priority: u8,
    #[serde(default = "active")]
    pub standing: Standing,
}

fn active() -> Standing {
    Standing::Active
}

/// Northbound rejection codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Error)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    #[error("auth-failure")]
    AuthFailure,
    #[error("no-eligible-sites")]
    NoEligibleSites,
    #[error("bad-token")]
    BadToken,
    #[error("expired-token")]
    ExpiredToken,
    #[error("malformed")]
    Malformed,
    #[error("over-ceiling")]
    OverCeiling,
    #[error("wrong-class")]
    WrongClass,
    #[error("duplicate-id")]
    DuplicateId,
    #[error("not-found")]
    NotFound,
}

impl From<TokenError> for RejectReason {
    fn from(e: TokenError) -> Self {
        match e {
            TokenError::BadToken => RejectReason::BadToken,
            TokenError::Expired => RejectReason::ExpiredToken,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Alternative {
    RaisePriority { tier: u8 },
    ResubmitAsBatch,
    AlternateSite { sites: Vec<SiteId> },
}

/// Advice code telling the user to authenticate again instead of retrying.
pub const REAUTHENTICATE: &str = "re-authenticate";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionAdvice {
    /// The site's rejection code, or `re-authenticate` for token failures.
    pub reason: String,
    pub alternatives: Vec<Alternative>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TelemetryError {
    #[error("telemetry from unregistered site {0}")]
    UnknownSite(SiteId),
    #[error("stale telemetry from {0}")]
    Stale(SiteId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoConfig {
    pub intent: Intent,
    pub tenants: Vec<TenantRecord>,
    pub sites: Vec<SiteConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmRecord {
    pub site_id: SiteId,
    pub at: SimTime,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochReport {
    pub deadline_rejected: Vec<WorkloadId>,
    pub plan: PlacementPlan,
}

#[derive(Debug, Clone)]
struct SiteEntry {
    config: SiteConfig,
    snapshot: Option<SiteSnapshot>,
    policy: Option<SharingPolicy>,
    /// RAN demand the current policy was computed from.
    policy_basis: ResourceVector,
}

#[derive(Debug)]
pub struct AiSmo {
    intent: Intent,
    tenants: BTreeMap<TenantId, TenantRecord>,
    sites: BTreeMap<SiteId, SiteEntry>,
    signer: TokenSigner,
    jobs: BTreeMap<WorkloadId, JobRecord>,
    dispatched_at: BTreeMap<WorkloadId, SimTime>,
    rt_reports: BTreeMap<WorkloadId, RtResult>,
    alarms: Vec<AlarmRecord>,
    outbox: Vec<(SiteId, Payload)>,
    next_seq: u64,
    next_token: u64,
    epoch_requested: bool,
}

impl AiSmo {
    pub fn new(config: SmoConfig, signer: TokenSigner) -> Self {
        Self {
            intent: config.intent,
            tenants: config.tenants.into_iter().map(|t| (t.tenant_id.clone(), t)).collect(),
            sites: config
                .sites
                .into_iter()
                .map(|c| {
                    (
                        c.site_id.clone(),
                        SiteEntry {
                            config: c,
                            snapshot: None,
                            policy: None,
                            policy_basis: ResourceVector::ZERO,
                        },
                    )
                })
                .collect(),
            signer,
            jobs: BTreeMap::new(),
            dispatched_at: BTreeMap::new(),
            rt_reports: BTreeMap::new(),
            alarms: Vec::new(),
            outbox: Vec::new(),
            next_seq: 0,
            next_token: 0,
            epoch_requested: false,
        }
    }

    pub fn intent(&self) -> &Intent {
        &self.intent
    }

    pub fn jobs(&self) -> impl Iterator<Item = &JobRecord> {
        self.jobs.values()
    }

    pub fn job(&self, id: &WorkloadId) -> Option<&JobRecord> {
        self.jobs.get(id)
    }

    pub fn snapshot(&self, site: &SiteId) -> Option<&SiteSnapshot> {
        self.sites.get(site).and_then(|s| s.snapshot.as_ref())
    }

    pub fn policy(&self, site: &SiteId) -> Option<&SharingPolicy> {
        self.sites.get(site).and_then(|s| s.policy.as_ref())
    }

    pub fn alarms(&self) -> &[AlarmRecord] {
        &self.alarms
    }

    pub fn take_outbox(&mut self) -> Vec<(SiteId, Payload)> {
        std::mem::take(&mut self.outbox)
    }

    /// Whether something happened that warrants an immediate epoch. Clears
    /// the request.
    pub fn take_epoch_request(&mut self) -> bool {
        std::mem::take(&mut self.epoch_requested)
    }

    fn largest_node(&self, site: &SiteEntry) -> ResourceVector {
        match &site.snapshot {
            Some(s) => s.largest_node(),
            None => site
                .config
                .nodes
                .iter()
                .fold(ResourceVector::ZERO, |m, n| m.component_max(&n.capacity)),
        }
    }

    pub fn authenticate(&mut self, req: &AuthRequest, now: SimTime) -> Result<AuthToken, RejectReason> {
        let tenant = self.tenants.get(&req.tenant).ok_or(RejectReason::AuthFailure)?;
        if tenant.standing != Standing::Active || tenant.credential != req.credential {
            return Err(RejectReason::AuthFailure);
        }
        let sites: BTreeSet<SiteId> = req
            .sites
            .iter()
            .filter(|s| self.intent.ai_enabled_sites.contains(*s) && self.sites.contains_key(*s))
            .cloned()
            .collect();
        if sites.is_empty() {
            return Err(RejectReason::NoEligibleSites);
        }
        let largest = sites
            .iter()
            .map(|s| self.largest_node(&self.sites[s]))
            .fold(ResourceVector::ZERO, |m, n| m.component_max(&n));
        let duration = if req.duration.is_finite() {
            req.duration.clamp(0.0, MAX_TOKEN_LIFETIME)
        } else {
            MAX_TOKEN_LIFETIME
        };
        self.next_token += 1;
        Ok(self.signer.issue(
            format!("tok-{}", self.next_token),
            req.tenant.clone(),
            sites,
            req.ceiling.component_min(&largest),
            now + duration,
        ))
    }

    fn check_token(&self, token: &AuthToken, now: SimTime) -> Result<(), RejectReason> {
        self.signer.verify(token, now)?;
        match self.tenants.get(&token.tenant) {
            Some(t) if t.standing == Standing::Active => Ok(()),
            _ => Err(RejectReason::AuthFailure),
        }
    }

    /// Checks, in order: token, descriptor invariants, ceiling, class.
    pub fn validate_workload(
        &self,
        d: &WorkloadDescriptor,
        token: &AuthToken,
        now: SimTime,
    ) -> Result<(), RejectReason> {
        self.check_token(token, now)?;
        if d.tenant != token.tenant {
            return Err(RejectReason::BadToken);
        }
        if d.validate().is_err() {
            return Err(RejectReason::Malformed);
        }
        if !d.elasticity.max().fits_in(&token.ceiling) {
            return Err(RejectReason::OverCeiling);
        }
        if d.class == WorkloadClass::Ran {
            return Err(RejectReason::WrongClass);
        }
        Ok(())
    }

    pub fn submit_batch(
        &mut self,
        token: &AuthToken,
        d: WorkloadDescriptor,
        now: SimTime,
    ) -> Result<WorkloadId, RejectReason> {
        self.validate_workload(&d, token, now)?;
        if d.class != WorkloadClass::AiBatch {
            return Err(RejectReason::WrongClass);
        }
        if self.jobs.contains_key(&d.id) {
            return Err(RejectReason::DuplicateId);
        }
        let eligible: BTreeSet<SiteId> = token
            .granted_sites
            .iter()
            .filter(|s| {
                self.intent.ai_enabled_sites.contains(*s)
                    && self
                        .sites
                        .get(*s)
                        .is_some_and(|e| d.target.matches(s, &e.config.region))
            })
            .cloned()
            .collect();
        if eligible.is_empty() {
            return Err(RejectReason::NoEligibleSites);
        }
        self.next_seq += 1;
        let id = d.id.clone();
        let mut job = JobRecord::new(d, eligible, self.next_seq);
        job.transition(LifecycleEvent::Validate, now, "validated")
            .and_then(|_| job.transition(LifecycleEvent::Enqueue, now, "submitted"))
            .expect("fresh job validates and enqueues");
        self.jobs.insert(id.clone(), job);
        self.epoch_requested = true;
        Ok(id)
    }

    fn issue_policy(&mut self, site: &SiteId, now: SimTime) {
        let entry = self.sites.get_mut(site).expect("registered site");
        let Some(snapshot) = &entry.snapshot else { return };
        let last = entry.policy.as_ref().map_or(0, |p| p.version);
        let decision = compute_policy(snapshot, &self.intent, last, now);
        entry.policy_basis = snapshot.ran_demand;
        if decision.alarm {
            self.alarms.push(AlarmRecord {
                site_id: site.clone(),
                at: now,
                detail: format!("RAN demand {} exceeds capacity", snapshot.ran_demand),
            });
        }
        entry.policy = Some(decision.policy.clone());
        self.outbox.push((site.clone(), Payload::PolicyUpdate(decision.policy)));
        self.epoch_requested = true;
    }

    pub fn update_intent(&mut self, intent: Intent, now: SimTime) {
        self.intent = intent;
        let sites: Vec<SiteId> = self.sites.keys().cloned().collect();
        for s in sites {
            self.issue_policy(&s, now);
        }
    }

    pub fn ingest_telemetry(&mut self, report: TelemetryReport, now: SimTime) -> Result<(), TelemetryError> {
        let site = report.site_id.clone();
        let entry = self
            .sites
            .get_mut(&site)
            .ok_or_else(|| TelemetryError::UnknownSite(site.clone()))?;
        if entry
            .snapshot
            .as_ref()
            .is_some_and(|s| s.taken_at >= report.snapshot.taken_at)
        {
            return Err(TelemetryError::Stale(site));
        }
        let capacity = report.snapshot.total_capacity();
        let reissue = match &entry.policy {
            None => true,
            Some(_) => ran_shift_requires_policy(
                &entry.policy_basis,
                &report.snapshot.ran_demand,
                &capacity,
                POLICY_SHIFT_FRACTION,
            ),
        };
        let taken_at = report.snapshot.taken_at;
        entry.snapshot = Some(report.snapshot);
        if reissue {
            self.issue_policy(&site, now);
        }
        self.reconcile(&site, taken_at, now);
        Ok(())
    }

    /// Running jobs that a site no longer hosts have finished there; their
    /// completion notice was lost. Preemption notices travel in the RAN
    /// class and are never dropped, so absence means completion.
    fn reconcile(&mut self, site: &SiteId, taken_at: SimTime, now: SimTime) {
        let snap = self.sites[site].snapshot.as_ref().expect("just stored");
        let gone: Vec<WorkloadId> = self
            .jobs
            .values()
            .filter(|j| j.state == JobState::Running)
            .filter(|j| j.placement.as_ref().is_some_and(|p| &p.site_id == site))
            .filter(|j| j.history.last().is_some_and(|h| h.at <= taken_at))
            .filter(|j| snap.find(&j.workload.id).is_none())
            .map(|j| j.workload.id.clone())
            .collect();
        for id in gone {
            self.finish(&id, now, "absent from telemetry");
        }
    }

    fn finish(&mut self, id: &WorkloadId, now: SimTime, reason: &str) {
        if let Some(job) = self.jobs.get_mut(id) {
            if job.transition(LifecycleEvent::Complete, now, reason).is_ok() {
                self.epoch_requested = true;
            }
        }
    }

    /// Site quota left after current and in-flight AI work.
    fn quota_left(&self, site: &SiteId) -> ResourceVector {
        let entry = &self.sites[site];
        match (&entry.snapshot, &entry.policy) {
            (Some(s), Some(p)) if !s.alarm => p.ai_quota.saturating_sub(&s.ai_allocated()),
            _ => ResourceVector::ZERO,
        }
    }

    pub fn query_capacity(&self, token: &AuthToken, now: SimTime) -> Result<CapacityReply, RejectReason> {
        self.check_token(token, now).map_err(|_| RejectReason::AuthFailure)?;
        let mut headroom = BTreeMap::new();
        for site in &token.granted_sites {
            let Some(snap) = self.snapshot(site) else { continue };
            let left = self.quota_left(site);
            let nodes = snap
                .nodes
                .iter()
                .map(|n| (n.node_id.clone(), snap.node_free(&n.node_id).component_min(&left)))
                .collect();
            headroom.insert(site.clone(), nodes);
        }
        Ok(CapacityReply { headroom })
    }

    /// Largest grant a single node at `site` could give AI work right now.
    fn node_headroom(&self, site: &SiteId) -> Vec<ResourceVector> {
        let Some(snap) = self.snapshot(site) else {
            return Vec::new();
        };
        let left = self.quota_left(site);
        snap.nodes
            .iter()
            .map(|n| snap.node_free(&n.node_id).component_min(&left))
            .collect()
    }

    pub fn record_rt_result(&mut self, result: RtResult) {
        if matches!(result.outcome, RtOutcome::NotAdmitted { .. }) {
            self.rt_reports.insert(result.descriptor.id.clone(), result);
        }
    }

    pub fn handle_rt_rejection(&self, job_id: &WorkloadId) -> Result<RejectionAdvice, RejectReason> {
        let report = self.rt_reports.get(job_id).ok_or(RejectReason::NotFound)?;
        let RtOutcome::NotAdmitted { reason } = report.outcome else {
            return Err(RejectReason::NotFound);
        };
        if reason.is_auth_failure() {
            return Ok(RejectionAdvice {
                reason: REAUTHENTICATE.into(),
                alternatives: Vec::new(),
            });
        }
        let d = &report.descriptor;
        let mut alternatives = Vec::new();
        if d.priority < MAX_PRIORITY {
            alternatives.push(Alternative::RaisePriority { tier: d.priority + 1 });
        }
        alternatives.push(Alternative::ResubmitAsBatch);
        let min = d.elasticity.min();
        let sites: Vec<SiteId> = report
            .token_sites
            .iter()
            .filter(|s| **s != report.site_id && self.intent.ai_enabled_sites.contains(*s))
            .filter(|s| self.node_headroom(s).iter().any(|h| min.fits_in(h)))
            .cloned()
            .collect();
        if !sites.is_empty() {
            alternatives.push(Alternative::AlternateSite { sites });
        }
        Ok(RejectionAdvice {
            reason: reason.as_str().into(),
            alternatives,
        })
    }

    /// Global view for placement: telemetry plus work dispatched since.
    fn planning_snapshots(&self) -> BTreeMap<SiteId, SiteSnapshot> {
        let mut view: BTreeMap<SiteId, SiteSnapshot> = self
            .sites
            .iter()
            .filter_map(|(id, e)| e.snapshot.clone().map(|s| (id.clone(), s)))
            .collect();
        for job in self.jobs.values().filter(|j| j.state.holds_placement()) {
            let p = job.placement.as_ref().expect("placement held");
            let Some(snap) = view.get_mut(&p.site_id) else { continue };
            if snap.find(&job.workload.id).is_some() {
                continue;
            }
            snap.allocations.entry(p.node_id.clone()).or_default().push(Allocation {
                workload_id: job.workload.id.clone(),
                class: job.workload.class,
                priority: job.workload.priority,
                granted: p.granted,
                admitted_at: 0.0,
            });
        }
        view
    }

    /// One scheduling epoch: rejects jobs whose deadline is out of reach,
    /// places the rest and dispatches, and retries stalled deployments.
    pub fn run_epoch(&mut self, now: SimTime) -> EpochReport {
        let mut report = EpochReport::default();
        for job in self.jobs.values_mut().filter(|j| j.state == JobState::Queued) {
            if job
                .workload
                .deadline
                .is_some_and(|dl| now + job.workload.est_duration > dl)
            {
                job.transition(LifecycleEvent::Reject, now, "deadline unreachable")
                    .expect("queued job can be rejected");
                report.deadline_rejected.push(job.workload.id.clone());
            }
        }
        let queue: Vec<JobRecord> = self
            .jobs
            .values()
            .filter(|j| j.state == JobState::Queued)
            .cloned()
            .collect();
        if !queue.is_empty() {
            let policies: BTreeMap<SiteId, SharingPolicy> = self
                .sites
                .iter()
                .filter_map(|(id, e)| e.policy.clone().map(|p| (id.clone(), p)))
                .collect();
            report.plan = place_batch(&queue, &self.planning_snapshots(), &policies);
            self.dispatch_deployments(&report.plan, now);
        }
        self.retry_stalled(now);
        report
    }

    pub fn dispatch_deployments(&mut self, plan: &PlacementPlan, now: SimTime) {
        for p in &plan.placements {
            let Some(job) = self.jobs.get_mut(&p.workload_id) else {
                continue;
            };
            let placement = Placement {
                site_id: p.site_id.clone(),
                node_id: p.node_id.clone(),
                granted: p.granted,
            };
            if job
                .transition(LifecycleEvent::Schedule(placement), now, "placed")
                .is_err()
                || job.transition(LifecycleEvent::Deploy, now, "dispatched").is_err()
            {
                log::warn!("job {} could not be dispatched from {:?}", p.workload_id, job.state);
                continue;
            }
            let policy_version = self.sites[&p.site_id].policy.as_ref().map_or(0, |x| x.version);
            self.dispatched_at.insert(p.workload_id.clone(), now);
            self.outbox.push((
                p.site_id.clone(),
                Payload::DeployRequest(DeployRequest {
                    job_id: p.workload_id.clone(),
                    descriptor: job.workload.clone(),
                    node_id: p.node_id.clone(),
                    granted: p.granted,
                    policy_version,
                }),
            ));
        }
    }

    fn retry_stalled(&mut self, now: SimTime) {
        let stalled: Vec<WorkloadId> = self
            .jobs
            .values()
            .filter(|j| j.state == JobState::Deploying)
            .filter(|j| {
                self.dispatched_at
                    .get(&j.workload.id)
                    .is_some_and(|t| now - t >= DEPLOY_RETRY_AFTER)
            })
            .map(|j| j.workload.id.clone())
            .collect();
        for id in stalled {
            let job = &self.jobs[&id];
            let p = job.placement.clone().expect("deploying job has a placement");
            let policy_version = self.sites[&p.site_id].policy.as_ref().map_or(0, |x| x.version);
            self.dispatched_at.insert(id.clone(), now);
            self.outbox.push((
                p.site_id.clone(),
                Payload::DeployRequest(DeployRequest {
                    job_id: id,
                    descriptor: job.workload.clone(),
                    node_id: p.node_id,
                    granted: p.granted,
                    policy_version,
                }),
            ));
        }
    }

    /// The link could not carry a deployment; the job goes back to the queue.
    pub fn on_transport_failure(&mut self, job_id: &WorkloadId, now: SimTime) {
        if let Some(job) = self.jobs.get_mut(job_id) {
            if job.transition(LifecycleEvent::Requeue, now, "transport").is_ok() {
                self.epoch_requested = true;
            }
        }
    }

    fn on_deploy_result(&mut self, r: DeployResult, now: SimTime) {
        let Some(job) = self.jobs.get_mut(&r.job_id) else {
            return;
        };
        let at_site = job.placement.as_ref().is_some_and(|p| p.site_id == r.site_id);
        if job.state != JobState::Deploying || !at_site {
            return;
        }
        self.dispatched_at.remove(&r.job_id);
        match r.outcome {
            DeployOutcome::Ack { granted } => {
                if let Err(e) = job.transition(LifecycleEvent::Start { granted }, now, "acknowledged") {
                    log::warn!("job {}: {e}", r.job_id);
                }
            }
            DeployOutcome::Refuse { reason } => {
                let reason = serde_json::to_value(reason).map(|v| v.to_string()).unwrap_or_default();
                job.transition(LifecycleEvent::Requeue, now, format!("refused {reason}"))
                    .expect("deploying job can be requeued");
                self.epoch_requested = true;
            }
        }
    }

    fn on_preempt(&mut self, n: PreemptNotice, now: SimTime) {
        let Some(job) = self.jobs.get_mut(&n.workload_id) else {
            return;
        };
        if !job.placement.as_ref().is_some_and(|p| p.site_id == n.site_id) {
            return;
        }
        let result = match job.state {
            JobState::Running => job
                .transition(LifecycleEvent::Preempt, now, "preempted for RAN")
                .and_then(|_| match n.disposition {
                    PreemptDisposition::Requeue => job.transition(LifecycleEvent::Requeue, now, "auto requeue"),
                    PreemptDisposition::Terminated => job.transition(LifecycleEvent::Terminate, now, "terminated"),
                }),
            // The acknowledgment is still in flight behind the notice.
            JobState::Deploying => job.transition(LifecycleEvent::Requeue, now, "preempted before ack"),
            _ => return,
        };
        if let Err(e) = result {
            log::warn!("job {}: {e}", n.workload_id);
        }
        self.dispatched_at.remove(&n.workload_id);
        self.epoch_requested = true;
    }

    /// Dispatches one southbound payload received from `site`.
    pub fn handle_southbound(&mut self, site: &SiteId, payload: Payload, now: SimTime) {
        match payload {
            Payload::Telemetry(r) => {
                if r.site_id != *site {
                    log::warn!("telemetry for {} arrived from {site}", r.site_id);
                    return;
                }
                if let Err(e) = self.ingest_telemetry(r, now) {
                    log::debug!("telemetry discarded: {e}");
                }
            }
            Payload::DeployResult(r) => self.on_deploy_result(r, now),
            Payload::PreemptNotice(n) => self.on_preempt(n, now),
            Payload::CompleteNotice(c) => {
                let ours = self
                    .jobs
                    .get(&c.workload_id)
                    .and_then(|j| j.placement.as_ref())
                    .is_some_and(|p| p.site_id == c.site_id);
                if ours {
                    self.finish(&c.workload_id, now, "completed");
                }
            }
            Payload::RtResult(r) => self.record_rt_result(r),
            Payload::Alarm(a) => self.alarms.push(AlarmRecord {
                site_id: a.site_id,
                at: a.at,
                detail: a.detail,
            }),
            other => log::warn!("unexpected southbound {:?} from {site}", other.kind()),
        }
    }

    /// Serves one northbound request and returns the reply payload.
    pub fn handle_northbound(&mut self, payload: Payload, now: SimTime) -> Payload {
        match payload {
            Payload::AuthRequest(r) => Payload::AuthReply(match self.authenticate(&r, now) {
                Ok(t) => AuthReply::Granted(t),
                Err(e) => AuthReply::Denied { reason: e.to_string() },
            }),
            Payload::ValidateRequest(r) => Payload::ValidateReply(ValidateReply {
                rejected: self.validate_workload(&r.descriptor, &r.token, now).err(),
            }),
            Payload::SubmitBatch(r) => Payload::SubmitReply(match self.submit_batch(&r.token, r.descriptor, now) {
                Ok(job_id) => SubmitReply::Accepted { job_id },
                Err(reason) => SubmitReply::Rejected { reason },
            }),
            Payload::CapacityQuery(q) => match self.query_capacity(&q.token, now) {
                Ok(r) => Payload::CapacityReply(r),
                Err(e) => Payload::ErrorReply(ErrorReply { message: e.to_string() }),
            },
            Payload::JobStatus(r) => Payload::JobStatusReply(JobStatusReply {
                record: self.jobs.get(&r.job_id).cloned(),
            }),
            Payload::AdviceRequest(AdviceRequest { job_id, report }) => {
                if let Some(r) = report {
                    if r.descriptor.id == job_id && !self.rt_reports.contains_key(&job_id) {
                        self.record_rt_result(r);
                    }
                }
                Payload::AdviceReply(match self.handle_rt_rejection(&job_id) {
                    Ok(a) => AdviceReply::Advice(a),
                    Err(_) => AdviceReply::NotFound,
                })
            }
            other => Payload::ErrorReply(ErrorReply {
                message: format!("unsupported request {:?}", other.kind()),
            }),
        }
    }

    /// Sites whose latest snapshot differs from `truth` in allocations,
    /// RAN demand or policy version.
    pub fn view_mismatches<'a>(&self, truth: impl IntoIterator<Item = &'a SiteSnapshot>) -> Vec<SiteId> {
        truth
            .into_iter()
            .filter(|t| {
                self.snapshot(&t.site_id).is_none_or(|s| {
                    s.allocations != t.allocations
                        || s.ran_demand != t.ran_demand
                        || s.policy_version != t.policy_version
                })
            })
            .map(|t| t.site_id.clone())
            .collect()
    }

    /// Checks that no job holds a placement outside its token's sites.
    pub fn check_invariants(&self) -> Result<(), String> {
        for j in self.jobs.values() {
            if let Some(p) = &j.placement {
                if !j.granted_sites.contains(&p.site_id) {
                    return Err(format!("job {} placed on ungranted site {}", j.workload.id, p.site_id));
                }
            }
        }
        Ok(())
    }

    /// RT rejection report for `id`, if one was received.
    pub fn rt_report(&self, id: &WorkloadId) -> Option<&RtResult> {
        self.rt_reports.get(id)
    }

    pub fn rejection_reason(&self, id: &WorkloadId) -> Option<RtRejectReason> {
        match self.rt_reports.get(id)?.outcome {
            RtOutcome::NotAdmitted { reason } => Some(reason),
            _ => None,
        }
    }
}
