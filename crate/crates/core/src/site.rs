//! AI-RAN edge site: the IMS applies orchestrator policies, the DMS runs the
//! deployment lifecycle on a simulated multi-node cluster, hosts RAN demand,
//! admits real-time AI requests locally and preempts AI work when RAN needs
//! capacity back.
//!
//! The site is sans-I/O. Messages for the orchestrator accumulate in an
//! outbox that the caller drains and ships over AI-O2.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::{TokenError, TokenSigner};
use crate::model::{
    Allocation, NodeId, NodeSpec, ResourceVector, SimTime, SiteId, SiteSnapshot, WorkloadClass, WorkloadId,
    MAX_PRIORITY,
};
use crate::o2::{
    Alarm, CompleteNotice, DeployOutcome, DeployRequest, DeployResult, NodeUsage, Payload, PreemptDisposition,
    PreemptNotice, RefuseReason, RtAdmissionRequest, RtOutcome, RtResult, TelemetryReport,
};
use crate::scheduler::placement::{best_fit, NodeCandidate};
use crate::scheduler::{select_preemption_victims, select_quota_victims, SharingPolicy};

/// Workload id under which a site books its RAN demand.
pub const RAN_WORKLOAD_ID: &str = "ran";

/// Default telemetry period in seconds.
pub const DEFAULT_TELEMETRY_PERIOD: SimTime = 0.5;

fn default_telemetry_period() -> SimTime {
    DEFAULT_TELEMETRY_PERIOD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteConfig {
    pub site_id: SiteId,
    pub region: String,
    pub nodes: Vec<NodeSpec>,
    #[serde(default = "default_telemetry_period")]
    pub telemetry_period: SimTime,
}

/// Why a real-time request was not admitted. Checked in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RtRejectReason {
    BadToken,
    ExpiredToken,
    SiteNotGranted,
    /// Descriptor fails its own invariants or is not a real-time workload.
    Malformed,
    OverCeiling,
    InsufficientQuota,
    InsufficientCapacity,
}

impl RtRejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RtRejectReason::BadToken => "bad-token",
            RtRejectReason::ExpiredToken => "expired-token",
            RtRejectReason::SiteNotGranted => "site-not-granted",
            RtRejectReason::Malformed => "malformed",
            RtRejectReason::OverCeiling => "over-ceiling",
            RtRejectReason::InsufficientQuota => "insufficient-quota",
            RtRejectReason::InsufficientCapacity => "insufficient-capacity",
        }
    }

    /// Failures the user fixes by re-authenticating, not by asking for capacity.
    pub fn is_auth_failure(&self) -> bool {
        matches!(
            self,
            RtRejectReason::BadToken | RtRejectReason::ExpiredToken | RtRejectReason::SiteNotGranted
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SiteError {
    #[error("policy for site {0} delivered to the wrong site")]
    WrongSite(SiteId),
    #[error("stale policy: version {offered} <= current {current}")]
    StalePolicy { offered: u64, current: u64 },
    #[error("workload {0} not found")]
    NotFound(WorkloadId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eviction {
    pub workload_id: WorkloadId,
    pub class: WorkloadClass,
    pub released: ResourceVector,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RanUpdateOutcome {
    pub victims: Vec<Eviction>,
    /// RAN demand the site could not serve even after evicting all AI work.
    pub shortfall: Option<ResourceVector>,
}

#[derive(Debug, Clone)]
struct Running {
    finishes_at: SimTime,
}

#[derive(Debug)]
pub struct AiRanSite {
    site_id: SiteId,
    region: String,
    nodes: Vec<NodeSpec>,
    policy: SharingPolicy,
    allocations: BTreeMap<NodeId, Vec<Allocation>>,
    running: BTreeMap<WorkloadId, Running>,
    ran_demand: ResourceVector,
    signer: TokenSigner,
    telemetry_period: SimTime,
    last_telemetry: Option<SimTime>,
    outbox: Vec<Payload>,
    messages_sent: u64,
}

impl AiRanSite {
    /// A cold-started site: no AI quota until the orchestrator issues a policy.
    pub fn new(config: SiteConfig, signer: TokenSigner) -> Self {
        let capacity = ResourceVector::sum(config.nodes.iter().map(|n| &n.capacity));
        let allocations = config.nodes.iter().map(|n| (n.node_id.clone(), Vec::new())).collect();
        Self {
            policy: SharingPolicy::cold_start(config.site_id.clone(), capacity),
            site_id: config.site_id,
            region: config.region,
            nodes: config.nodes,
            allocations,
            running: BTreeMap::new(),
            ran_demand: ResourceVector::ZERO,
            signer,
            telemetry_period: config.telemetry_period,
            last_telemetry: None,
            outbox: Vec::new(),
            messages_sent: 0,
        }
    }

    pub fn site_id(&self) -> &SiteId {
        &self.site_id
    }

    pub fn region(&self) -> &str {
        &self.region
    }

    pub fn policy(&self) -> &SharingPolicy {
        &self.policy
    }

    pub fn ran_demand(&self) -> ResourceVector {
        self.ran_demand
    }

    pub fn capacity(&self) -> ResourceVector {
        ResourceVector::sum(self.nodes.iter().map(|n| &n.capacity))
    }

    /// Messages pushed to the outbox since construction.
    pub fn messages_sent(&self) -> u64 {
        self.messages_sent
    }

    pub fn take_outbox(&mut self) -> Vec<Payload> {
        std::mem::take(&mut self.outbox)
    }

    fn emit(&mut self, p: Payload) {
        self.messages_sent += 1;
        self.outbox.push(p);
    }

    pub fn snapshot(&self, now: SimTime) -> SiteSnapshot {
        SiteSnapshot {
            site_id: self.site_id.clone(),
            region: self.region.clone(),
            nodes: self.nodes.clone(),
            allocations: self.allocations.clone(),
            policy_version: self.policy.version,
            ran_demand: self.ran_demand,
            taken_at: now,
            alarm: !self.ran_demand.fits_in(&self.capacity()),
        }
    }

    fn iter_allocs(&self) -> impl Iterator<Item = &Allocation> {
        self.allocations.values().flatten()
    }

    pub fn ai_allocated(&self) -> ResourceVector {
        ResourceVector::sum(self.iter_allocs().filter(|a| a.class.is_ai()).map(|a| &a.granted))
    }

    pub fn ran_allocated(&self) -> ResourceVector {
        ResourceVector::sum(self.iter_allocs().filter(|a| !a.class.is_ai()).map(|a| &a.granted))
    }

    fn used(&self) -> ResourceVector {
        ResourceVector::sum(self.iter_allocs().map(|a| &a.granted))
    }

    fn node_free(&self, node: &NodeSpec) -> ResourceVector {
        let used = ResourceVector::sum(self.allocations[&node.node_id].iter().map(|a| &a.granted));
        node.capacity.saturating_sub(&used)
    }

    fn quota_left(&self) -> ResourceVector {
        self.policy.ai_quota.saturating_sub(&self.ai_allocated())
    }

    pub fn is_hosting(&self, id: &WorkloadId) -> bool {
        self.iter_allocs().any(|a| &a.workload_id == id)
    }

    fn remove_workload(&mut self, id: &WorkloadId) -> Option<Allocation> {
        for list in self.allocations.values_mut() {
            if let Some(pos) = list.iter().position(|a| &a.workload_id == id) {
                self.running.remove(id);
                return Some(list.remove(pos));
            }
        }
        None
    }

    fn evict(&mut self, ids: &[WorkloadId], now: SimTime) -> Vec<Eviction> {
        let mut out = Vec::new();
        for id in ids {
            let Some(a) = self.remove_workload(id) else { continue };
            let disposition = match a.class {
                WorkloadClass::AiBatch => PreemptDisposition::Requeue,
                _ => PreemptDisposition::Terminated,
            };
            self.emit(Payload::PreemptNotice(PreemptNotice {
                site_id: self.site_id.clone(),
                workload_id: a.workload_id.clone(),
                class: a.class,
                disposition,
                at: now,
            }));
            out.push(Eviction {
                workload_id: a.workload_id,
                class: a.class,
                released: a.granted,
            });
        }
        out
    }

    /// IMS: applies a newer policy, evicting AI work if the quota shrank
    /// below the current AI allocation.
    pub fn ims_apply_policy(&mut self, policy: SharingPolicy, now: SimTime) -> Result<Vec<Eviction>, SiteError> {
        if policy.site_id != self.site_id {
            return Err(SiteError::WrongSite(policy.site_id));
        }
        if policy.version <= self.policy.version {
            return Err(SiteError::StalePolicy {
                offered: policy.version,
                current: self.policy.version,
            });
        }
        self.policy = policy;
        if self.ai_allocated().fits_in(&self.policy.ai_quota) || !self.policy.preemption_enabled {
            return Ok(Vec::new());
        }
        let victims = select_quota_victims(&self.snapshot(now), &self.policy.ai_quota)
            .expect("evicting every AI workload always satisfies a quota");
        Ok(self.evict(&victims, now))
    }

    /// DMS: allocates a batch placement decided by the orchestrator.
    /// Re-delivery of a request already served is acknowledged again.
    pub fn dms_deploy(&mut self, req: DeployRequest, now: SimTime) -> DeployResult {
        let outcome = self.deploy_outcome(&req, now);
        let result = DeployResult {
            job_id: req.job_id,
            site_id: self.site_id.clone(),
            outcome,
        };
        self.emit(Payload::DeployResult(result.clone()));
        result
    }

    fn deploy_outcome(&mut self, req: &DeployRequest, now: SimTime) -> DeployOutcome {
        if let Some(a) = self.iter_allocs().find(|a| a.workload_id == req.job_id) {
            return DeployOutcome::Ack { granted: a.granted };
        }
        if req.policy_version < self.policy.version {
            return DeployOutcome::Refuse {
                reason: RefuseReason::StalePolicy,
            };
        }
        let Some(node) = self.nodes.iter().find(|n| n.node_id == req.node_id).cloned() else {
            return DeployOutcome::Refuse {
                reason: RefuseReason::UnknownNode,
            };
        };
        if !(req.granted.fits_in(&self.node_free(&node)) && req.granted.fits_in(&self.quota_left())) {
            return DeployOutcome::Refuse {
                reason: RefuseReason::StaleView,
            };
        }
        self.allocate(
            &node.node_id,
            Allocation {
                workload_id: req.job_id.clone(),
                class: req.descriptor.class,
                priority: req.descriptor.priority,
                granted: req.granted,
                admitted_at: now,
            },
            now + req.descriptor.est_duration,
        );
        DeployOutcome::Ack { granted: req.granted }
    }

    fn allocate(&mut self, node: &NodeId, a: Allocation, finishes_at: SimTime) {
        self.running.insert(a.workload_id.clone(), Running { finishes_at });
        self.allocations.get_mut(node).expect("node exists").push(a);
    }

    /// DMS real-time path: decides locally, in the same event, without any
    /// round-trip to the orchestrator. Rejections are reported to the
    /// orchestrator after the decision.
    pub fn dms_admit_realtime(&mut self, req: RtAdmissionRequest, now: SimTime) -> RtResult {
        let sent_before = self.messages_sent;
        let decision = self.admission_decision(&req, now);
        debug_assert_eq!(
            self.messages_sent, sent_before,
            "admission must not message before deciding"
        );
        let token_sites = match self.signer.verify_tag(&req.token) {
            Ok(()) => req.token.granted_sites.clone(),
            Err(_) => Default::default(),
        };
        let outcome = match decision {
            Ok((node_id, grant)) => {
                self.allocate(
                    &node_id,
                    Allocation {
                        workload_id: req.descriptor.id.clone(),
                        class: WorkloadClass::AiRealtime,
                        priority: req.descriptor.priority,
                        granted: grant,
                        admitted_at: now,
                    },
                    now + req.descriptor.est_duration,
                );
                RtOutcome::Deployed {
                    handle: format!("{}/{}", self.site_id, req.descriptor.id),
                    node_id,
                    grant,
                    admission_latency: (now - req.submitted_at).max(0.0),
                }
            }
            Err(reason) => RtOutcome::NotAdmitted { reason },
        };
        let result = RtResult {
            site_id: self.site_id.clone(),
            descriptor: req.descriptor,
            token_sites,
            outcome,
        };
        if matches!(result.outcome, RtOutcome::NotAdmitted { .. }) {
            self.emit(Payload::RtResult(result.clone()));
        }
        result
    }

    fn admission_decision(
        &self,
        req: &RtAdmissionRequest,
        now: SimTime,
    ) -> Result<(NodeId, ResourceVector), RtRejectReason> {
        match self.signer.verify(&req.token, now) {
            Ok(()) => {}
            Err(TokenError::BadToken) => return Err(RtRejectReason::BadToken),
            Err(TokenError::Expired) => return Err(RtRejectReason::ExpiredToken),
        }
        let d = &req.descriptor;
        if !req.token.granted_sites.contains(&self.site_id) || !d.target.matches(&self.site_id, &self.region) {
            return Err(RtRejectReason::SiteNotGranted);
        }
        if d.validate().is_err()
            || d.class != WorkloadClass::AiRealtime
            || d.tenant != req.token.tenant
            || self.is_hosting(&d.id)
        {
            return Err(RtRejectReason::Malformed);
        }
        if !d.elasticity.max().fits_in(&req.token.ceiling) {
            return Err(RtRejectReason::OverCeiling);
        }
        let quota_left = self.quota_left();
        if !d.elasticity.min().fits_in(&quota_left) {
            return Err(RtRejectReason::InsufficientQuota);
        }
        let candidates = self.nodes.iter().map(|n| NodeCandidate {
            site_id: self.site_id.clone(),
            node_id: n.node_id.clone(),
            capacity: n.capacity,
            available: self.node_free(n).component_min(&quota_left),
        });
        best_fit(candidates, &d.elasticity)
            .map(|(c, grant)| (c.node_id, grant))
            .ok_or(RtRejectReason::InsufficientCapacity)
    }

    /// Sets the RAN demand and serves it immediately, preempting AI work
    /// when free capacity falls short.
    pub fn ran_demand_update(&mut self, new_demand: ResourceVector, now: SimTime) -> RanUpdateOutcome {
        self.ran_demand = new_demand;
        let current = self.ran_allocated();
        let decrease = current.saturating_sub(&new_demand);
        if !decrease.is_zero() {
            self.release_ran(decrease);
        }
        let increase = new_demand.saturating_sub(&self.ran_allocated());
        let mut outcome = RanUpdateOutcome::default();
        if increase.is_zero() {
            return outcome;
        }
        let free = self.capacity().saturating_sub(&self.used());
        if !increase.fits_in(&free) {
            match select_preemption_victims(&self.snapshot(now), &increase) {
                Ok(victims) => outcome.victims = self.evict(&victims, now),
                Err(_) => {
                    let all: Vec<WorkloadId> = self
                        .iter_allocs()
                        .filter(|a| a.class.is_ai())
                        .map(|a| a.workload_id.clone())
                        .collect();
                    outcome.victims = self.evict(&all, now);
                }
            }
        }
        let free = self.capacity().saturating_sub(&self.used());
        let grant = increase.component_min(&free);
        self.grow_ran(grant, now);
        if grant != increase {
            let shortfall = increase.saturating_sub(&grant);
            log::warn!("site {}: RAN shortfall {shortfall}", self.site_id);
            self.emit(Payload::Alarm(Alarm {
                site_id: self.site_id.clone(),
                at: now,
                shortfall,
                detail: format!("RAN demand {new_demand} exceeds capacity {}", self.capacity()),
            }));
            outcome.shortfall = Some(shortfall);
        }
        outcome
    }

    /// Spreads `amount` over nodes in order, component by component.
    fn grow_ran(&mut self, amount: ResourceVector, now: SimTime) {
        let mut left = amount.components();
        for node in self.nodes.clone() {
            let free = self.node_free(&node).components();
            let take: [u64; 5] = std::array::from_fn(|i| left[i].min(free[i]));
            for i in 0..5 {
                left[i] -= take[i];
            }
            let take = ResourceVector::from_components(take);
            if take.is_zero() {
                continue;
            }
            let list = self.allocations.get_mut(&node.node_id).unwrap();
            match list.iter_mut().find(|a| a.class == WorkloadClass::Ran) {
                Some(a) => a.granted = a.granted.saturating_add(&take),
                None => list.push(Allocation {
                    workload_id: RAN_WORKLOAD_ID.into(),
                    class: WorkloadClass::Ran,
                    priority: MAX_PRIORITY,
                    granted: take,
                    admitted_at: now,
                }),
            }
        }
    }

    /// Releases `amount` of RAN allocation, last node first.
    fn release_ran(&mut self, amount: ResourceVector) {
        let mut left = amount.components();
        for node in self.nodes.iter().rev() {
            let list = self.allocations.get_mut(&node.node_id).unwrap();
            let Some(pos) = list.iter().position(|a| a.class == WorkloadClass::Ran) else {
                continue;
            };
            let have = list[pos].granted.components();
            let give: [u64; 5] = std::array::from_fn(|i| left[i].min(have[i]));
            for i in 0..5 {
                left[i] -= give[i];
            }
            list[pos].granted = list[pos].granted.saturating_sub(&ResourceVector::from_components(give));
            if list[pos].granted.is_zero() {
                list.remove(pos);
            }
        }
    }

    pub fn emit_telemetry(&mut self, now: SimTime) -> TelemetryReport {
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeUsage {
                node_id: n.node_id.clone(),
                capacity: n.capacity,
                used: n.capacity.saturating_sub(&self.node_free(n)),
            })
            .collect();
        let report = TelemetryReport {
            site_id: self.site_id.clone(),
            timestamp: now,
            nodes,
            snapshot: self.snapshot(now),
        };
        self.last_telemetry = Some(now);
        self.emit(Payload::Telemetry(report.clone()));
        report
    }

    pub fn workload_complete(&mut self, id: &WorkloadId, now: SimTime) -> Result<Allocation, SiteError> {
        if id.as_str() == RAN_WORKLOAD_ID {
            return Err(SiteError::NotFound(id.clone()));
        }
        let a = self
            .remove_workload(id)
            .ok_or_else(|| SiteError::NotFound(id.clone()))?;
        self.emit(Payload::CompleteNotice(CompleteNotice {
            site_id: self.site_id.clone(),
            workload_id: id.clone(),
            at: now,
        }));
        Ok(a)
    }

    /// Earliest pending local timer: a workload finishing or telemetry due.
    pub fn next_timer(&self) -> Option<SimTime> {
        let completion = self.running.values().map(|r| r.finishes_at).min_by(f64::total_cmp);
        let telemetry = Some(self.last_telemetry.map_or(0.0, |t| t + self.telemetry_period));
        [completion, telemetry].into_iter().flatten().min_by(f64::total_cmp)
    }

    /// Fires local timers due at `now`: completes finished workloads and
    /// emits telemetry when the period has elapsed.
    pub fn tick(&mut self, now: SimTime) -> Vec<WorkloadId> {
        let due: Vec<WorkloadId> = self
            .running
            .iter()
            .filter(|(_, r)| r.finishes_at <= now)
            .map(|(id, _)| id.clone())
            .collect();
        for id in &due {
            let _ = self.workload_complete(id, now);
        }
        if self
            .last_telemetry
            .is_none_or(|t| now >= t + self.telemetry_period - 1e-9)
        {
            self.emit_telemetry(now);
        }
        due
    }

    /// Dispatches one inbound AI-O2 payload. Returns a direct reply for
    /// request/response verbs (RT_ADMIT).
    pub fn handle_payload(&mut self, payload: Payload, now: SimTime) -> Option<Payload> {
        match payload {
            Payload::PolicyUpdate(p) => {
                if let Err(e) = self.ims_apply_policy(p, now) {
                    log::info!("site {}: policy not applied: {e}", self.site_id);
                }
                None
            }
            Payload::DeployRequest(r) => {
                self.dms_deploy(r, now);
                None
            }
            Payload::RtAdmit(r) => Some(Payload::RtResult(self.dms_admit_realtime(r, now))),
            other => {
                log::warn!("site {}: ignoring unexpected {:?}", self.site_id, other.kind());
                None
            }
        }
    }

    /// Site invariants: conservation per node, AI within quota, RAN served
    /// whenever capacity permits.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.snapshot(0.0).check_conservation()?;
        if self.policy.preemption_enabled && !self.ai_allocated().fits_in(&self.policy.ai_quota) {
            return Err(format!(
                "site {}: AI allocation {} exceeds quota {}",
                self.site_id,
                self.ai_allocated(),
                self.policy.ai_quota
            ));
        }
        if self.ran_demand.fits_in(&self.capacity()) && self.ran_allocated() != self.ran_demand {
            return Err(format!(
                "site {}: RAN allocated {} but demand {} fits capacity",
                self.site_id,
                self.ran_allocated(),
                self.ran_demand
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth::{AuthToken, SECRET_LEN};
    use crate::model::{Elasticity, Target, WorkloadDescriptor};
    use std::collections::BTreeSet;

    fn signer() -> TokenSigner {
        TokenSigner::new([3u8; SECRET_LEN])
    }

    fn site(nodes: &[u64]) -> AiRanSite {
        AiRanSite::new(
            SiteConfig {
                site_id: "s1".into(),
                region: "east".into(),
                nodes: nodes
                    .iter()
                    .enumerate()
                    .map(|(i, c)| NodeSpec {
                        node_id: format!("gpu{i}").into(),
                        capacity: ResourceVector::accel(*c),
                    })
                    .collect(),
                telemetry_period: 0.5,
            },
            signer(),
        )
    }

    fn with_quota(s: &mut AiRanSite, quota: u64) {
        let v = s.policy().version + 1;
        s.ims_apply_policy(
            SharingPolicy::new(
                "s1".into(),
                v,
                ResourceVector::ZERO,
                ResourceVector::accel(quota),
                true,
                0.0,
            ),
            0.0,
        )
        .unwrap();
    }

    fn token(sites: &[&str], expiry: f64) -> AuthToken {
        signer().issue(
            "t1",
            "alice".into(),
            sites.iter().map(|s| SiteId::from(*s)).collect::<BTreeSet<_>>(),
            ResourceVector::accel(2000),
            expiry,
        )
    }

    fn rt(id: &str, min: u64, preferred: u64) -> WorkloadDescriptor {
        WorkloadDescriptor {
            id: id.into(),
            tenant: "alice".into(),
            class: WorkloadClass::AiRealtime,
            elasticity: Elasticity::Elastic {
                min: ResourceVector::accel(min),
                preferred: ResourceVector::accel(preferred),
                max: ResourceVector::accel(preferred),
            },
            target: Target::Site("s1".into()),
            priority: 3,
            deadline: None,
            est_duration: 10.0,
        }
    }

    fn admit(s: &mut AiRanSite, d: WorkloadDescriptor, tok: AuthToken, now: f64) -> RtOutcome {
        s.dms_admit_realtime(
            RtAdmissionRequest {
                token: tok,
                descriptor: d,
                submitted_at: now,
            },
            now,
        )
        .outcome
    }

    fn batch_req(id: &str, node: &str, granted: u64, version: u64) -> DeployRequest {
        DeployRequest {
            job_id: id.into(),
            descriptor: WorkloadDescriptor {
                id: id.into(),
                tenant: "alice".into(),
                class: WorkloadClass::AiBatch,
                elasticity: Elasticity::NonElastic {
                    demand: ResourceVector::accel(granted),
                },
                target: Target::AnySite,
                priority: 1,
                deadline: None,
                est_duration: 5.0,
            },
            node_id: node.into(),
            granted: ResourceVector::accel(granted),
            policy_version: version,
        }
    }

    #[test]
    fn policy_versions() {
        let mut s = site(&[2000]);
        with_quota(&mut s, 800); // v1
        with_quota(&mut s, 800); // v2
        let p = |v| {
            SharingPolicy::new(
                "s1".into(),
                v,
                ResourceVector::ZERO,
                ResourceVector::accel(1),
                true,
                0.0,
            )
        };
        assert!(s.ims_apply_policy(p(3), 0.0).is_ok());
        assert_eq!(
            s.ims_apply_policy(p(3), 0.0),
            Err(SiteError::StalePolicy { offered: 3, current: 3 })
        );
    }

    /// Quota shrink 800 -> 400 with 700 allocated across three jobs.
    /// Eviction order (priority asc, newest first): c(p1,t3,200), a(p1,t1,300), b(p3,t2,200).
    /// Releasing c leaves 500 > 400; releasing a too leaves 200 <= 400. Victims: c, a.
    #[test]
    fn quota_shrink_evicts_until_within_quota() {
        let mut s = site(&[2000]);
        with_quota(&mut s, 800);
        let v = s.policy().version;
        let mut b = batch_req("b", "gpu0", 200, v);
        b.descriptor.priority = 3;
        assert!(matches!(
            s.dms_deploy(batch_req("a", "gpu0", 300, v), 1.0).outcome,
            DeployOutcome::Ack { .. }
        ));
        assert!(matches!(s.dms_deploy(b, 2.0).outcome, DeployOutcome::Ack { .. }));
        assert!(matches!(
            s.dms_deploy(batch_req("c", "gpu0", 200, v), 3.0).outcome,
            DeployOutcome::Ack { .. }
        ));
        s.take_outbox();
        let evicted = s
            .ims_apply_policy(
                SharingPolicy::new(
                    "s1".into(),
                    v + 1,
                    ResourceVector::ZERO,
                    ResourceVector::accel(400),
                    true,
                    4.0,
                ),
                4.0,
            )
            .unwrap();
        let ids: Vec<_> = evicted.iter().map(|e| e.workload_id.as_str()).collect();
        assert_eq!(ids, ["c", "a"]);
        assert_eq!(s.ai_allocated(), ResourceVector::accel(200));
        assert_eq!(s.take_outbox().len(), 2);
        s.check_invariants().unwrap();
    }

    #[test]
    fn deploy_checks() {
        let mut s = site(&[1000]);
        with_quota(&mut s, 800);
        let v = s.policy().version;
        assert!(matches!(
            s.dms_deploy(batch_req("a", "gpu0", 500, v), 0.0).outcome,
            DeployOutcome::Ack { .. }
        ));
        // Re-delivery is idempotent.
        assert!(matches!(
            s.dms_deploy(batch_req("a", "gpu0", 500, v), 0.0).outcome,
            DeployOutcome::Ack { .. }
        ));
        // Quota violated by one unit.
        assert_eq!(
            s.dms_deploy(batch_req("b", "gpu0", 301, v), 0.0).outcome,
            DeployOutcome::Refuse {
                reason: RefuseReason::StaleView
            }
        );
        assert!(matches!(
            s.dms_deploy(batch_req("b", "gpu0", 300, v), 0.0).outcome,
            DeployOutcome::Ack { .. }
        ));
        assert_eq!(
            s.dms_deploy(batch_req("c", "gpu9", 1, v), 0.0).outcome,
            DeployOutcome::Refuse {
                reason: RefuseReason::UnknownNode
            }
        );
        with_quota(&mut s, 900);
        assert_eq!(
            s.dms_deploy(batch_req("c", "gpu0", 1, v), 0.0).outcome,
            DeployOutcome::Refuse {
                reason: RefuseReason::StalePolicy
            }
        );
    }

    #[test]
    fn node_full_since_dispatch_is_stale_view() {
        let mut s = site(&[1000]);
        with_quota(&mut s, 1000);
        s.ran_demand_update(ResourceVector::accel(900), 0.0);
        let v = s.policy().version;
        assert_eq!(
            s.dms_deploy(batch_req("a", "gpu0", 200, v), 0.0).outcome,
            DeployOutcome::Refuse {
                reason: RefuseReason::StaleView
            }
        );
    }

    #[test]
    fn realtime_admission_examples() {
        let mut s = site(&[2000]);
        with_quota(&mut s, 800);
        let tok = token(&["s1"], 100.0);
        assert!(matches!(
            admit(&mut s, rt("u", 200, 200), tok.clone(), 0.0),
            RtOutcome::Deployed { .. }
        ));
        match admit(&mut s, rt("a", 300, 500), tok.clone(), 1.0) {
            RtOutcome::Deployed { grant, .. } => assert_eq!(grant, ResourceVector::accel(500)),
            o => panic!("{o:?}"),
        }
        s.workload_complete(&"a".into(), 2.0).unwrap();
        assert_eq!(
            admit(&mut s, rt("b", 700, 700), tok.clone(), 3.0),
            RtOutcome::NotAdmitted {
                reason: RtRejectReason::InsufficientQuota
            }
        );
        let other = token(&["s2"], 100.0);
        assert_eq!(
            admit(&mut s, rt("c", 1, 1), other, 3.0),
            RtOutcome::NotAdmitted {
                reason: RtRejectReason::SiteNotGranted
            }
        );
    }

    #[test]
    fn all_realtime_reasons_reachable() {
        let mut s = site(&[500, 500]);
        with_quota(&mut s, 800);
        let good = token(&["s1"], 100.0);
        let mut tampered = good.clone();
        tampered.ceiling.accel_milli += 1;
        let cases = [
            (rt("a", 1, 1), tampered, 0.0, RtRejectReason::BadToken),
            (rt("a", 1, 1), good.clone(), 100.0, RtRejectReason::ExpiredToken),
            (
                rt("a", 1, 1),
                token(&["s9"], 100.0),
                0.0,
                RtRejectReason::SiteNotGranted,
            ),
            (rt("a", 2, 1), good.clone(), 0.0, RtRejectReason::Malformed),
            (rt("a", 1, 2500), good.clone(), 0.0, RtRejectReason::OverCeiling),
            (rt("a", 900, 900), good.clone(), 0.0, RtRejectReason::InsufficientQuota),
            // 600 fits the 800 quota but no single 500-unit node.
            (
                rt("a", 600, 600),
                good.clone(),
                0.0,
                RtRejectReason::InsufficientCapacity,
            ),
        ];
        for (d, tok, now, want) in cases {
            assert_eq!(admit(&mut s, d, tok, now), RtOutcome::NotAdmitted { reason: want });
        }
    }

    #[test]
    fn admission_is_local() {
        let mut s = site(&[2000]);
        with_quota(&mut s, 800);
        let before = s.messages_sent();
        let out = admit(&mut s, rt("a", 100, 100), token(&["s1"], 100.0), 0.0);
        assert!(matches!(out, RtOutcome::Deployed { .. }));
        assert_eq!(s.messages_sent(), before);
        admit(&mut s, rt("b", 900, 900), token(&["s1"], 100.0), 0.0);
        assert_eq!(s.messages_sent(), before + 1);
    }

    #[test]
    fn cold_start_admits_nothing() {
        let mut s = site(&[2000]);
        assert_eq!(
            admit(&mut s, rt("a", 1, 1), token(&["s1"], 100.0), 0.0),
            RtOutcome::NotAdmitted {
                reason: RtRejectReason::InsufficientQuota
            }
        );
    }

    #[test]
    fn ran_growth_within_free_capacity() {
        let mut s = site(&[1000, 1000]);
        s.ran_demand_update(ResourceVector::accel(1000), 0.0);
        with_quota(&mut s, 700);
        s.dms_deploy(batch_req("a", "gpu1", 700, s.policy().version), 0.0);
        let out = s.ran_demand_update(ResourceVector::accel(1200), 1.0);
        assert!(out.victims.is_empty());
        assert_eq!(s.ran_allocated(), ResourceVector::accel(1200));
        s.check_invariants().unwrap();
    }

    /// 2 x 1000 site with RAN 1000, batch y (tier 1, 400) and real-time z
    /// (tier 3, 300), free 300. RAN rises to 1800: 800 needed beyond free
    /// is 500. Victim order is tier ascending: y releases 400 (free 700),
    /// still short, then z (free 1000).
    #[test]
    fn ran_spike_preempts_both_ai_jobs() {
        let mut s = site(&[1000, 1000]);
        with_quota(&mut s, 1000);
        s.ran_demand_update(ResourceVector::accel(1000), 0.0);
        let v = s.policy().version;
        s.dms_deploy(batch_req("y", "gpu1", 400, v), 2.0);
        let z = rt("z", 300, 300);
        assert!(matches!(
            admit(&mut s, z, token(&["s1"], 100.0), 3.0),
            RtOutcome::Deployed { .. }
        ));
        assert_eq!(s.capacity().saturating_sub(&s.used()), ResourceVector::accel(300));
        s.take_outbox();
        let out = s.ran_demand_update(ResourceVector::accel(1800), 4.0);
        let ids: Vec<_> = out.victims.iter().map(|e| e.workload_id.as_str()).collect();
        assert_eq!(ids, ["y", "z"]);
        assert!(out.shortfall.is_none());
        assert_eq!(s.ran_allocated(), ResourceVector::accel(1800));
        let notices: Vec<_> = s
            .take_outbox()
            .into_iter()
            .filter_map(|p| match p {
                Payload::PreemptNotice(n) => Some(n.disposition),
                _ => None,
            })
            .collect();
        assert_eq!(notices, [PreemptDisposition::Requeue, PreemptDisposition::Terminated]);
        s.check_invariants().unwrap();
    }

    #[test]
    fn ran_over_capacity_alarms_and_takes_everything() {
        let mut s = site(&[1000, 1000]);
        with_quota(&mut s, 1000);
        s.dms_deploy(batch_req("a", "gpu0", 500, s.policy().version), 0.0);
        let out = s.ran_demand_update(ResourceVector::accel(2500), 1.0);
        assert_eq!(out.shortfall, Some(ResourceVector::accel(500)));
        assert_eq!(out.victims.len(), 1);
        assert_eq!(s.ran_allocated(), ResourceVector::accel(2000));
        assert!(s.take_outbox().iter().any(|p| matches!(p, Payload::Alarm(_))));
        assert!(s.snapshot(1.0).alarm);
        s.check_invariants().unwrap();
    }

    #[test]
    fn ran_shrinks() {
        let mut s = site(&[1000, 1000]);
        s.ran_demand_update(ResourceVector::accel(1500), 0.0);
        s.ran_demand_update(ResourceVector::accel(400), 1.0);
        assert_eq!(s.ran_allocated(), ResourceVector::accel(400));
        s.ran_demand_update(ResourceVector::ZERO, 2.0);
        assert_eq!(s.ran_allocated(), ResourceVector::ZERO);
        s.check_invariants().unwrap();
    }

    #[test]
    fn telemetry_reports() {
        let mut s = site(&[1000, 1000]);
        let r = s.emit_telemetry(0.0);
        assert!(r.nodes.iter().all(|n| n.used.is_zero()));
        assert_eq!(r.snapshot.total_capacity(), ResourceVector::accel(2000));
        s.ran_demand_update(ResourceVector::accel(1400), 1.0);
        let r = s.emit_telemetry(1.0);
        assert!(r.nodes.iter().all(|n| n.used.fits_in(&n.capacity)));
        assert_eq!(r.snapshot.ran_demand, ResourceVector::accel(1400));
    }

    #[test]
    fn completion_releases_once() {
        let mut s = site(&[1000]);
        with_quota(&mut s, 1000);
        s.dms_deploy(batch_req("a", "gpu0", 500, s.policy().version), 0.0);
        let free_before = s.capacity().saturating_sub(&s.used());
        s.workload_complete(&"a".into(), 1.0).unwrap();
        let free_after = s.capacity().saturating_sub(&s.used());
        assert_eq!(free_after.saturating_sub(&free_before), ResourceVector::accel(500));
        assert_eq!(
            s.workload_complete(&"a".into(), 1.0),
            Err(SiteError::NotFound("a".into()))
        );
    }

    #[test]
    fn completion_of_preempted_is_not_found() {
        let mut s = site(&[1000]);
        with_quota(&mut s, 1000);
        s.dms_deploy(batch_req("a", "gpu0", 500, s.policy().version), 0.0);
        s.ran_demand_update(ResourceVector::accel(1000), 1.0);
        assert!(s.workload_complete(&"a".into(), 2.0).is_err());
    }

    #[test]
    fn tick_completes_due_work() {
        let mut s = site(&[1000]);
        with_quota(&mut s, 1000);
        s.dms_deploy(batch_req("a", "gpu0", 500, s.policy().version), 0.0);
        assert_eq!(s.next_timer(), Some(0.0));
        s.tick(0.0);
        assert_eq!(s.next_timer(), Some(0.5));
        assert!(s.tick(4.9).is_empty());
        assert_eq!(s.tick(5.0), vec![WorkloadId::from("a")]);
    }
}
