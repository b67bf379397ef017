//! Single-threaded discrete-event engine wiring the orchestrator, the sites
//! and one SMO-site link pair per site.
//!
//! Events run in `(time, insertion order)` order. Northbound client calls
//! (authentication, batch submission, rejection advice) are in-process;
//! everything between the orchestrator and the sites crosses a [`SimLink`].

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use ordered_float::OrderedFloat;
use thiserror::Error;

use super::generators::{generate_events, GenAction, GenEvent};
use super::metrics::{MetricsLog, UtilSample};
use super::scenario::{Generator, Scenario};
use crate::auth::{AuthToken, TokenSigner};
use crate::model::{JobState, ResourceVector, SimTime, SiteId, TenantId, WorkloadClass, WorkloadDescriptor};
use crate::o2::{
    AdviceReply, AdviceRequest, AuthReply, AuthRequest, EnvelopeFactory, Payload, RtAdmissionRequest, RtOutcome,
    SeqTracker, SimLink,
};
use crate::site::AiRanSite;
use crate::smo::{AiSmo, Alternative, SmoConfig};

const SMO_SENDER: &str = "smo";
const TRACE_LEN: usize = 32;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Check every module invariant after every event.
    pub check_invariants: bool,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("invariant violated at t={time}: {detail}\nrecent events:\n{}", trace.join("\n"))]
    Invariant {
        time: SimTime,
        detail: String,
        trace: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    Down,
    Up,
}

#[derive(Debug, Clone)]
enum Event {
    Gen(GenEvent),
    RtArrive { generator: usize, req: RtAdmissionRequest },
    SiteTimer(SiteId),
    LinkWake(SiteId, Dir),
    Epoch,
    Sample,
}

struct Queued {
    time: OrderedFloat<f64>,
    seq: u64,
    event: Event,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

struct SiteRuntime {
    site: AiRanSite,
    envelopes: EnvelopeFactory,
    down: SimLink,
    up: SimLink,
    down_seen: SeqTracker,
    up_seen: SeqTracker,
    timer_at: Option<SimTime>,
    down_wake: Option<SimTime>,
    up_wake: Option<SimTime>,
}

/// A client identity used by a generator.
struct Client {
    tenant: TenantId,
    credential: String,
    sites: std::collections::BTreeSet<SiteId>,
    ceiling: ResourceVector,
    token: Option<AuthToken>,
}

pub struct Simulation {
    duration: SimTime,
    epoch_period: SimTime,
    sample_period: SimTime,
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Reverse<Queued>>,
    smo: AiSmo,
    smo_envelopes: EnvelopeFactory,
    sites: BTreeMap<SiteId, SiteRuntime>,
    clients: BTreeMap<usize, Client>,
    du_share: BTreeMap<usize, (SiteId, ResourceVector)>,
    client_delay: BTreeMap<usize, SimTime>,
    log: MetricsLog,
    trace: VecDeque<String>,
    opts: RunOptions,
}

/// Runs `scenario` to completion.
pub fn run(scenario: &Scenario, opts: RunOptions) -> Result<MetricsLog, SimError> {
    let mut sim = Simulation::new(scenario, opts)?;
    sim.run_to_end()?;
    Ok(sim.finish())
}

impl Simulation {
    pub fn new(scenario: &Scenario, opts: RunOptions) -> Result<Self, SimError> {
        scenario.validate().map_err(|e| SimError::Scenario(e.to_string()))?;
        let signer = TokenSigner::from_hex(&scenario.secret).map_err(|e| SimError::Scenario(e.to_string()))?;
        let smo = AiSmo::new(
            SmoConfig {
                intent: scenario.intent.clone(),
                tenants: scenario.tenants.clone(),
                sites: scenario.sites.clone(),
            },
            signer.clone(),
        );
        let sites = scenario
            .sites
            .iter()
            .map(|c| {
                let link = scenario.link_for(&c.site_id);
                (
                    c.site_id.clone(),
                    SiteRuntime {
                        site: AiRanSite::new(c.clone(), signer.clone()),
                        envelopes: EnvelopeFactory::new(c.site_id.as_str()),
                        down: SimLink::new(link.clone()),
                        up: SimLink::new(link),
                        down_seen: SeqTracker::default(),
                        up_seen: SeqTracker::default(),
                        timer_at: None,
                        down_wake: None,
                        up_wake: None,
                    },
                )
            })
            .collect();
        let mut sim = Self {
            duration: scenario.duration,
            epoch_period: scenario.epoch_period,
            sample_period: scenario.sample_period,
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            smo,
            smo_envelopes: EnvelopeFactory::new(SMO_SENDER),
            sites,
            clients: BTreeMap::new(),
            du_share: BTreeMap::new(),
            client_delay: BTreeMap::new(),
            log: MetricsLog {
                duration: scenario.duration,
                ..Default::default()
            },
            trace: VecDeque::new(),
            opts,
        };

        let capacity = |id: &SiteId| {
            scenario
                .site(id)
                .map(|s| ResourceVector::sum(s.nodes.iter().map(|n| &n.capacity)))
                .unwrap_or_default()
        };
        for (i, g) in scenario.generators.iter().enumerate() {
            match g {
                Generator::Chatbot(p) => {
                    sim.clients.insert(
                        i,
                        Client {
                            tenant: p.tenant.clone(),
                            credential: p.credential.clone(),
                            sites: [p.site.clone()].into(),
                            ceiling: p.max,
                            token: None,
                        },
                    );
                    sim.client_delay.insert(i, p.client_delay);
                }
                Generator::BatchMix(p) => {
                    let ceiling = ResourceVector::accel(p.demand_accel_milli.1);
                    sim.clients.insert(
                        i,
                        Client {
                            tenant: p.tenant.clone(),
                            credential: p.credential.clone(),
                            sites: p.sites.clone(),
                            ceiling,
                            token: None,
                        },
                    );
                }
                Generator::DuTrace(_) => {}
            }
            for e in generate_events(g, i, scenario.seed, scenario.duration, capacity) {
                sim.schedule(e.time, Event::Gen(e));
            }
        }
        let ids: Vec<SiteId> = sim.sites.keys().cloned().collect();
        for id in ids {
            sim.arm_site(&id);
        }
        sim.schedule(0.0, Event::Epoch);
        sim.schedule(0.0, Event::Sample);
        Ok(sim)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn smo(&self) -> &AiSmo {
        &self.smo
    }

    pub fn site(&self, id: &SiteId) -> Option<&AiRanSite> {
        self.sites.get(id).map(|r| &r.site)
    }

    pub fn sites(&self) -> impl Iterator<Item = &AiRanSite> {
        self.sites.values().map(|r| &r.site)
    }

    pub fn log(&self) -> &MetricsLog {
        &self.log
    }

    fn schedule(&mut self, time: SimTime, event: Event) {
        debug_assert!(time >= self.now, "event scheduled in the past");
        self.seq += 1;
        self.queue.push(Reverse(Queued {
            time: OrderedFloat(time),
            seq: self.seq,
            event,
        }));
    }

    /// Processes the next event. Returns false when the run is over.
    pub fn step(&mut self) -> Result<bool, SimError> {
        let Some(Reverse(next)) = self.queue.peek() else {
            return Ok(false);
        };
        if next.time.0 > self.duration {
            return Ok(false);
        }
        let Reverse(q) = self.queue.pop().expect("peeked");
        self.now = q.time.0;
        let label = self.handle(q.event);
        if let Some(label) = label {
            self.log.events += 1;
            if self.trace.len() == TRACE_LEN {
                self.trace.pop_front();
            }
            self.trace.push_back(format!("t={:.6} {label}", self.now));
            self.after_event()?;
        }
        Ok(true)
    }

    pub fn run_until(&mut self, t: SimTime) -> Result<(), SimError> {
        while self.queue.peek().is_some_and(|Reverse(q)| q.time.0 <= t) {
            if !self.step()? {
                break;
            }
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<(), SimError> {
        while self.step()? {}
        Ok(())
    }

    /// Final batch statistics; consumes the simulation.
    pub fn finish(mut self) -> MetricsLog {
        for j in self.smo.jobs() {
            if j.history.iter().any(|h| h.to == JobState::Running) {
                self.log.batch_reached_running += 1;
            }
            match j.state {
                JobState::Completed => self.log.batch_completed += 1,
                JobState::Rejected => self.log.batch_deadline_rejected += 1,
                _ => {}
            }
        }
        for r in self.sites.values() {
            self.log.ai_frames_dropped += r.down.stats().dropped_ai + r.up.stats().dropped_ai;
        }
        self.log
    }

    /// Sites whose orchestrator view differs from their local state.
    pub fn view_mismatches(&self) -> Vec<SiteId> {
        let truth: Vec<_> = self.sites.values().map(|r| r.site.snapshot(self.now)).collect();
        self.smo.view_mismatches(&truth)
    }

    fn handle(&mut self, event: Event) -> Option<String> {
        let now = self.now;
        match event {
            Event::Gen(g) => Some(self.on_generator(g)),
            Event::RtArrive { generator, req } => {
                let site_id = match &req.descriptor.target {
                    crate::model::Target::Site(s) => s.clone(),
                    _ => return None,
                };
                let label = format!("rt-admit {} at {site_id}", req.descriptor.id);
                let rt = self.sites.get_mut(&site_id)?;
                let result = rt.site.dms_admit_realtime(req, now);
                match &result.outcome {
                    RtOutcome::Deployed { admission_latency, .. } => {
                        self.log.rt_admitted += 1;
                        self.log.admission_latency_sum += admission_latency;
                    }
                    RtOutcome::NotAdmitted { reason } => {
                        *self.log.rt_rejected.entry(reason.as_str().to_string()).or_default() += 1;
                        let reply = self.smo.handle_northbound(
                            Payload::AdviceRequest(AdviceRequest {
                                job_id: result.descriptor.id.clone(),
                                report: Some(result.clone()),
                            }),
                            now,
                        );
                        if let Payload::AdviceReply(AdviceReply::Advice(a)) = reply {
                            for alt in &a.alternatives {
                                match alt {
                                    Alternative::ResubmitAsBatch => self.log.advice_resubmit_as_batch += 1,
                                    Alternative::AlternateSite { .. } => self.log.advice_alternate_site += 1,
                                    Alternative::RaisePriority { .. } => {}
                                }
                            }
                        }
                        if reason.is_auth_failure() {
                            if let Some(c) = self.clients.get_mut(&generator) {
                                c.token = None;
                            }
                        }
                    }
                }
                Some(label)
            }
            Event::SiteTimer(id) => {
                let rt = self.sites.get_mut(&id)?;
                if rt.timer_at != Some(now) {
                    return None;
                }
                rt.timer_at = None;
                rt.site.tick(now);
                Some(format!("timer {id}"))
            }
            Event::LinkWake(id, dir) => {
                let rt = self.sites.get_mut(&id)?;
                let slot = match dir {
                    Dir::Down => &mut rt.down_wake,
                    Dir::Up => &mut rt.up_wake,
                };
                if *slot != Some(now) {
                    return None;
                }
                *slot = None;
                let deliveries = match dir {
                    Dir::Down => rt.down.poll(now),
                    Dir::Up => rt.up.poll(now),
                };
                for d in &deliveries {
                    self.log.record_delivery(d);
                }
                for d in deliveries {
                    let rt = self.sites.get_mut(&id).expect("site exists");
                    let fresh = match dir {
                        Dir::Down => rt.down_seen.accept(&d.envelope),
                        Dir::Up => rt.up_seen.accept(&d.envelope),
                    };
                    if !fresh {
                        continue;
                    }
                    let payload = match d.envelope.decode_payload() {
                        Ok(p) => p,
                        Err(e) => {
                            log::error!("undecodable payload on {id}: {e}");
                            continue;
                        }
                    };
                    match dir {
                        Dir::Down => {
                            rt.site.handle_payload(payload, now);
                        }
                        Dir::Up => self.smo.handle_southbound(&id, payload, now),
                    }
                }
                Some(format!("link {id} {dir:?}"))
            }
            Event::Epoch => {
                let r = self.smo.run_epoch(now);
                let next = now + self.epoch_period;
                self.schedule(next, Event::Epoch);
                Some(format!("epoch placed={}", r.plan.placements.len()))
            }
            Event::Sample => {
                let depth = self.smo.jobs().filter(|j| j.state == JobState::Queued).count();
                for (id, rt) in &self.sites {
                    self.log.samples.push(UtilSample {
                        time: now,
                        site: id.clone(),
                        ran_milli: rt.site.ran_allocated().accel_milli,
                        ai_milli: rt.site.ai_allocated().accel_milli,
                        capacity_milli: rt.site.capacity().accel_milli,
                        queue_depth: depth,
                    });
                }
                let next = now + self.sample_period;
                self.schedule(next, Event::Sample);
                Some("sample".into())
            }
        }
    }

    fn token_for(&mut self, generator: usize) -> Option<AuthToken> {
        let now = self.now;
        let c = self.clients.get_mut(&generator)?;
        if let Some(t) = &c.token {
            if t.expiry > now {
                return Some(t.clone());
            }
        }
        let req = AuthRequest {
            tenant: c.tenant.clone(),
            credential: c.credential.clone(),
            sites: c.sites.clone(),
            ceiling: c.ceiling,
            duration: crate::smo::MAX_TOKEN_LIFETIME,
        };
        match self.smo.handle_northbound(Payload::AuthRequest(req), now) {
            Payload::AuthReply(AuthReply::Granted(t)) => {
                c.token = Some(t.clone());
                Some(t)
            }
            _ => None,
        }
    }

    fn on_generator(&mut self, g: GenEvent) -> String {
        let now = self.now;
        match g.action {
            GenAction::RanDemand { site, demand } => {
                self.du_share.insert(g.generator, (site.clone(), demand));
                let total = ResourceVector::sum(self.du_share.values().filter(|(s, _)| *s == site).map(|(_, d)| d));
                if let Some(rt) = self.sites.get_mut(&site) {
                    rt.site.ran_demand_update(total, now);
                }
                format!("ran-demand {site} {total}")
            }
            GenAction::RtRequest { descriptor } => {
                self.log.rt_requests += 1;
                let label = format!("rt-request {}", descriptor.id);
                match self.token_for(g.generator) {
                    Some(token) => {
                        let delay = self.client_delay.get(&g.generator).copied().unwrap_or(0.0);
                        self.schedule(
                            now + delay,
                            Event::RtArrive {
                                generator: g.generator,
                                req: RtAdmissionRequest {
                                    token,
                                    descriptor,
                                    submitted_at: now,
                                },
                            },
                        );
                    }
                    None => *self.log.rt_rejected.entry("auth-failure".into()).or_default() += 1,
                }
                label
            }
            GenAction::BatchSubmit { descriptor } => self.submit_batch(g.generator, descriptor),
        }
    }

    fn submit_batch(&mut self, generator: usize, d: WorkloadDescriptor) -> String {
        let label = format!("batch-submit {}", d.id);
        let result = match self.token_for(generator) {
            Some(t) => self.smo.submit_batch(&t, d, self.now).map_err(|e| e.to_string()),
            None => Err("auth-failure".to_string()),
        };
        match result {
            Ok(_) => self.log.batch_submitted += 1,
            Err(reason) => *self.log.batch_submit_rejected.entry(reason).or_default() += 1,
        }
        label
    }

    fn after_event(&mut self) -> Result<(), SimError> {
        let now = self.now;
        // Epochs requested by this event run at the same instant.
        for _ in 0..4 {
            if self.smo.take_epoch_request() {
                self.smo.run_epoch(now);
            }
            if !self.flush() {
                break;
            }
        }
        let ids: Vec<SiteId> = self.sites.keys().cloned().collect();
        for id in &ids {
            self.arm_site(id);
        }
        for rt in self.sites.values() {
            let s = &rt.site;
            if s.ran_demand().fits_in(&s.capacity()) && s.ran_allocated() != s.ran_demand() {
                self.log.ran_violations += 1;
            }
        }
        if self.opts.check_invariants {
            if let Err(detail) = self.check_invariants() {
                self.log.invariant_failures += 1;
                return Err(SimError::Invariant {
                    time: now,
                    detail,
                    trace: self.trace.iter().cloned().collect(),
                });
            }
        }
        Ok(())
    }

    fn check_invariants(&self) -> Result<(), String> {
        for rt in self.sites.values() {
            rt.site.check_invariants()?;
        }
        self.smo.check_invariants()?;
        for j in self.smo.jobs() {
            if j.state == JobState::Running {
                let p = j.placement.as_ref().expect("running job holds a placement");
                if !j.granted_sites.contains(&p.site_id) {
                    return Err(format!("job {} running outside its token scope", j.workload.id));
                }
            }
        }
        Ok(())
    }

    /// Moves outboxes onto links. Returns whether anything was sent.
    fn flush(&mut self) -> bool {
        let now = self.now;
        let mut sent = false;
        for (site, payload) in self.smo.take_outbox() {
            let Some(rt) = self.sites.get_mut(&site) else { continue };
            sent = true;
            let job = match &payload {
                Payload::DeployRequest(r) => Some(r.job_id.clone()),
                _ => None,
            };
            let env = self.smo_envelopes.wrap(site.as_str(), &payload);
            if let Err(e) = rt.down.send(&env, now) {
                log::error!("link to {site}: {e}");
                self.log.link_errors += 1;
                if let Some(job) = job {
                    self.smo.on_transport_failure(&job, now);
                }
            }
        }
        for (id, rt) in self.sites.iter_mut() {
            for payload in rt.site.take_outbox() {
                sent = true;
                match &payload {
                    Payload::PreemptNotice(n) => {
                        let class = match n.class {
                            WorkloadClass::AiBatch => "AI_BATCH",
                            WorkloadClass::AiRealtime => "AI_REALTIME",
                            WorkloadClass::Ran => "RAN",
                        };
                        *self.log.preemptions.entry(class.into()).or_default() += 1;
                    }
                    Payload::Alarm(_) => self.log.alarms += 1,
                    _ => {}
                }
                let env = rt.envelopes.wrap(id.as_str(), &payload);
                if let Err(e) = rt.up.send(&env, now) {
                    log::error!("link from {id}: {e}");
                    self.log.link_errors += 1;
                }
            }
        }
        sent
    }

    /// Schedules the next site timer and link wake-ups if they moved earlier.
    fn arm_site(&mut self, id: &SiteId) {
        let rt = self.sites.get_mut(id).expect("site exists");
        let mut pending = Vec::new();
        if let Some(t) = rt.site.next_timer() {
            let t = t.max(self.now);
            if rt.timer_at.is_none_or(|cur| t < cur) {
                rt.timer_at = Some(t);
                pending.push((t, Event::SiteTimer(id.clone())));
            }
        }
        for (link, slot, dir) in [
            (&rt.down, &mut rt.down_wake, Dir::Down),
            (&rt.up, &mut rt.up_wake, Dir::Up),
        ] {
            if let Some(t) = link.next_wakeup() {
                let t = t.max(self.now);
                if slot.is_none_or(|cur| t < cur) {
                    *slot = Some(t);
                    pending.push((t, Event::LinkWake(id.clone(), dir)));
                }
            }
        }
        for (t, e) in pending {
            self.schedule(t, e);
        }
    }
}
