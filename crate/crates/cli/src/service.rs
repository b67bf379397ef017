//! Service mode: the orchestrator and the sites as long-running processes
//! speaking AI-O2 frames over TCP.
//!
//! Each process has one owner thread holding the state. Socket reader
//! threads only decode frames and forward them over a channel, so every
//! mutation happens in arrival order on the owner.

use std::collections::BTreeMap;
use std::io;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use airan_core::auth::TokenSigner;
use airan_core::model::{Intent, ResourceVector, SimTime, SiteId};
use airan_core::o2::{read_frame, write_frame, Envelope, EnvelopeFactory, ErrorReply, Payload, PayloadKind, QosClass};
use airan_core::site::{AiRanSite, SiteConfig};
use airan_core::smo::{AiSmo, SmoConfig, TenantRecord};
use serde::Deserialize;

/// Longest the owner thread blocks before rechecking timers and shutdown.
const POLL: Duration = Duration::from_millis(50);
const RECONNECT: Duration = Duration::from_millis(500);

/// Wall clock in seconds since the Unix epoch. Token expiries in service
/// mode are expressed on this clock.
pub fn wall_now() -> SimTime {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoServiceConfig {
    pub listen: String,
    pub secret: String,
    pub intent: Intent,
    pub tenants: Vec<TenantRecord>,
    pub sites: Vec<SiteConfig>,
    #[serde(default = "one")]
    pub epoch_period: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteServiceConfig {
    pub listen: String,
    pub secret: String,
    /// Orchestrator address; without it the site runs on its cold-start policy.
    #[serde(default)]
    pub smo: Option<String>,
    pub site: SiteConfig,
    /// Static RAN demand injected at start-up.
    #[serde(default)]
    pub ran_demand: ResourceVector,
}

#[derive(Debug)]
pub enum ServeError {
    Bind(String, io::Error),
    Config(String),
}

impl std::fmt::Display for ServeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ServeError::Bind(addr, e) => write!(f, "cannot bind {addr}: {e}"),
            ServeError::Config(m) => write!(f, "bad configuration: {m}"),
        }
    }
}

type ConnId = u64;

enum Inbound {
    Opened(ConnId, TcpStream),
    Frame(ConnId, Envelope),
    Closed(ConnId),
}

fn bind(addr: &str) -> Result<TcpListener, ServeError> {
    let l = TcpListener::bind(addr).map_err(|e| ServeError::Bind(addr.to_string(), e))?;
    let local = l.local_addr().map_err(|e| ServeError::Bind(addr.to_string(), e))?;
    println!("listening on {local}");
    Ok(l)
}

fn spawn_reader(id: ConnId, stream: TcpStream, tx: Sender<Inbound>) {
    thread::spawn(move || {
        let mut stream = stream;
        loop {
            match read_frame(&mut stream) {
                Ok(env) => {
                    if tx.send(Inbound::Frame(id, env)).is_err() {
                        return;
                    }
                }
                Err(e) => {
                    log::debug!("connection {id} closed: {e}");
                    let _ = tx.send(Inbound::Closed(id));
                    return;
                }
            }
        }
    });
}

fn spawn_acceptor(listener: TcpListener, tx: Sender<Inbound>, first_id: ConnId) {
    thread::spawn(move || {
        let mut next = first_id;
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let _ = stream.set_nodelay(true);
            let Ok(writer) = stream.try_clone() else { continue };
            if tx.send(Inbound::Opened(next, writer)).is_err() {
                return;
            }
            spawn_reader(next, stream, tx.clone());
            next += 1;
        }
    });
}

/// RAN_CONTROL frames go out before AI_MGMT ones queued in the same batch.
fn by_class<T>(mut items: Vec<(T, Payload)>) -> Vec<(T, Payload)> {
    items.sort_by_key(|(_, p)| match p.kind().qos_class() {
        QosClass::RanControl => 0,
        QosClass::AiMgmt => 1,
    });
    items
}

fn is_northbound(kind: PayloadKind) -> bool {
    matches!(
        kind,
        PayloadKind::AuthRequest
            | PayloadKind::ValidateRequest
            | PayloadKind::SubmitBatch
            | PayloadKind::CapacityQuery
            | PayloadKind::JobStatus
            | PayloadKind::AdviceRequest
    )
}

fn send(conns: &mut BTreeMap<ConnId, TcpStream>, id: ConnId, env: &Envelope) -> bool {
    let Some(stream) = conns.get_mut(&id) else { return false };
    match write_frame(stream, env) {
        Ok(()) => true,
        Err(e) => {
            log::warn!("write to connection {id} failed: {e}");
            conns.remove(&id);
            false
        }
    }
}

pub fn serve_smo(cfg: SmoServiceConfig, shutdown: Arc<AtomicBool>) -> Result<(), ServeError> {
    let signer = TokenSigner::from_hex(&cfg.secret).map_err(|e| ServeError::Config(e.to_string()))?;
    cfg.intent.validate().map_err(|e| ServeError::Config(e.to_string()))?;
    if !(cfg.epoch_period.is_finite() && cfg.epoch_period > 0.0) {
        return Err(ServeError::Config("epoch_period must be positive".into()));
    }
    let listener = bind(&cfg.listen)?;
    let mut smo = AiSmo::new(
        SmoConfig {
            intent: cfg.intent,
            tenants: cfg.tenants,
            sites: cfg.sites,
        },
        signer,
    );
    let (tx, rx) = mpsc::channel();
    spawn_acceptor(listener, tx, 1);

    let mut envelopes = EnvelopeFactory::new("smo");
    let mut conns: BTreeMap<ConnId, TcpStream> = BTreeMap::new();
    let mut site_conns: BTreeMap<SiteId, ConnId> = BTreeMap::new();
    let mut next_epoch = wall_now() + cfg.epoch_period;

    while !shutdown.load(Ordering::SeqCst) {
        match rx.recv_timeout(POLL) {
            Ok(Inbound::Opened(id, s)) => {
                conns.insert(id, s);
            }
            Ok(Inbound::Closed(id)) => {
                conns.remove(&id);
                site_conns.retain(|_, c| *c != id);
            }
            Ok(Inbound::Frame(id, env)) => {
                let now = wall_now();
                let payload = match env.decode_payload() {
                    Ok(p) => p,
                    Err(e) => {
                        let reply = Payload::ErrorReply(ErrorReply { message: e.to_string() });
                        send(&mut conns, id, &envelopes.wrap("", &reply));
                        continue;
                    }
                };
                if is_northbound(payload.kind()) {
                    let reply = smo.handle_northbound(payload, now);
                    send(&mut conns, id, &envelopes.wrap("", &reply));
                } else {
                    let site = SiteId::from(env.sender.as_str());
                    site_conns.insert(site.clone(), id);
                    smo.handle_southbound(&site, payload, now);
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        let now = wall_now();
        if now >= next_epoch {
            smo.run_epoch(now);
            next_epoch = now + cfg.epoch_period;
        }
        if smo.take_epoch_request() {
            smo.run_epoch(now);
        }
        for (site, payload) in by_class(smo.take_outbox()) {
            let env = envelopes.wrap(site.as_str(), &payload);
            let delivered = site_conns.get(&site).is_some_and(|id| send(&mut conns, *id, &env));
            if !delivered {
                log::warn!("site {site} unreachable, {:?} not delivered", payload.kind());
                if let Payload::DeployRequest(r) = &payload {
                    smo.on_transport_failure(&r.job_id, now);
                }
            }
        }
    }
    log::info!("orchestrator shutting down");
    Ok(())
}

/// Keeps a connection to the orchestrator open, reconnecting as needed.
fn spawn_smo_link(addr: String, tx: Sender<Inbound>, shutdown: Arc<AtomicBool>) {
    const SMO_CONN: ConnId = 0;
    thread::spawn(move || {
        while !shutdown.load(Ordering::SeqCst) {
            match TcpStream::connect(&addr) {
                Ok(mut stream) => {
                    let _ = stream.set_nodelay(true);
                    let Ok(writer) = stream.try_clone() else { continue };
                    if tx.send(Inbound::Opened(SMO_CONN, writer)).is_err() {
                        return;
                    }
                    while let Ok(env) = read_frame(&mut stream) {
                        if tx.send(Inbound::Frame(SMO_CONN, env)).is_err() {
                            return;
                        }
                    }
                    if tx.send(Inbound::Closed(SMO_CONN)).is_err() {
                        return;
                    }
                }
                Err(e) => log::debug!("orchestrator at {addr} unreachable: {e}"),
            }
            thread::sleep(RECONNECT);
        }
    });
}

pub fn serve_site(cfg: SiteServiceConfig, shutdown: Arc<AtomicBool>) -> Result<(), ServeError> {
    const SMO_CONN: ConnId = 0;
    let signer = TokenSigner::from_hex(&cfg.secret).map_err(|e| ServeError::Config(e.to_string()))?;
    if cfg.site.nodes.is_empty() {
        return Err(ServeError::Config("site has no nodes".into()));
    }
    let listener = bind(&cfg.listen)?;
    let site_id = cfg.site.site_id.clone();
    let mut site = AiRanSite::new(cfg.site, signer);
    site.ran_demand_update(cfg.ran_demand, wall_now());

    let (tx, rx): (Sender<Inbound>, Receiver<Inbound>) = mpsc::channel();
    spawn_acceptor(listener, tx.clone(), 1);
    if let Some(addr) = cfg.smo {
        spawn_smo_link(addr, tx, shutdown.clone());
    }

    let mut envelopes = EnvelopeFactory::new(site_id.as_str());
    let mut conns: BTreeMap<ConnId, TcpStream> = BTreeMap::new();

    let flush = |site: &mut AiRanSite, conns: &mut BTreeMap<ConnId, TcpStream>, envelopes: &mut EnvelopeFactory| {
        let out: Vec<((), Payload)> = site.take_outbox().into_iter().map(|p| ((), p)).collect();
        for ((), payload) in by_class(out) {
            let env = envelopes.wrap(site_id.as_str(), &payload);
            if !send(conns, SMO_CONN, &env) {
                log::debug!("no orchestrator link, dropped {:?}", payload.kind());
            }
        }
    };

    while !shutdown.load(Ordering::SeqCst) {
        let wait = site.next_timer().map_or(POLL, |t| {
            Duration::from_secs_f64((t - wall_now()).clamp(0.0, POLL.as_secs_f64()))
        });
        match rx.recv_timeout(wait) {
            Ok(Inbound::Opened(id, s)) => {
                conns.insert(id, s);
                if id == SMO_CONN {
                    // Announce ourselves with fresh state.
                    site.emit_telemetry(wall_now());
                }
            }
            Ok(Inbound::Closed(id)) => {
                conns.remove(&id);
            }
            Ok(Inbound::Frame(id, env)) => {
                let now = wall_now();
                let reply = match env.decode_payload() {
                    Ok(p) if id == SMO_CONN => {
                        site.handle_payload(p, now);
                        None
                    }
                    Ok(p @ Payload::RtAdmit(_)) => site.handle_payload(p, now),
                    Ok(other) => Some(Payload::ErrorReply(ErrorReply {
                        message: format!("site does not serve {:?}", other.kind()),
                    })),
                    Err(e) => Some(Payload::ErrorReply(ErrorReply { message: e.to_string() })),
                };
                if let Some(r) = reply {
                    send(&mut conns, id, &envelopes.wrap(site_id.as_str(), &r));
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        let now = wall_now();
        if site.next_timer().is_some_and(|t| t <= now) {
            site.tick(now);
        }
        flush(&mut site, &mut conns, &mut envelopes);
    }
    log::info!("site {site_id} shutting down, flushing telemetry");
    site.emit_telemetry(wall_now());
    flush(&mut site, &mut conns, &mut envelopes);
    Ok(())
}
