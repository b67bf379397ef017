//! AI-O2 envelope and payload schemas.

use std::collections::{BTreeMap, BTreeSet};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::AuthToken;
use crate::model::{
    JobRecord, NodeId, ResourceVector, SimTime, SiteId, SiteSnapshot, TenantId, WorkloadClass, WorkloadDescriptor,
    WorkloadId,
};
use crate::scheduler::SharingPolicy;
use crate::site::RtRejectReason;
use crate::smo::{RejectReason, RejectionAdvice};

pub const PROTOCOL_VERSION: u8 = 1;

/// Transport priority class. RAN control traffic always drains first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum QosClass {
    RanControl = 0,
    AiMgmt = 1,
}

impl QosClass {
    pub const ALL: [QosClass; 2] = [QosClass::RanControl, QosClass::AiMgmt];

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(QosClass::RanControl),
            1 => Some(QosClass::AiMgmt),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

macro_rules! payload_kinds {
    ($( $variant:ident = $code:literal => $ty:ty, $qos:ident; )*) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "SCREAMING_SNAKE_CASE")]
        #[repr(u8)]
        pub enum PayloadKind {
            $( $variant = $code, )*
        }

        impl PayloadKind {
            pub const ALL: &'static [PayloadKind] = &[$( PayloadKind::$variant, )*];

            pub fn from_u8(v: u8) -> Option<Self> {
                match v {
                    $( $code => Some(PayloadKind::$variant), )*
                    _ => None,
                }
            }

            pub fn qos_class(self) -> QosClass {
                match self {
                    $( PayloadKind::$variant => QosClass::$qos, )*
                }
            }
        }

        /// Typed payloads. Each serializes to JSON inside the envelope.
        #[derive(Debug, Clone, PartialEq)]
        pub enum Payload {
            $( $variant($ty), )*
        }

        impl Payload {
            pub fn kind(&self) -> PayloadKind {
                match self {
                    $( Payload::$variant(_) => PayloadKind::$variant, )*
                }
            }

            pub fn to_bytes(&self) -> Vec<u8> {
                match self {
                    $( Payload::$variant(v) => serde_json::to_vec(v), )*
                }
                .expect("payload types serialize infallibly")
            }

            pub fn from_bytes(kind: PayloadKind, bytes: &[u8]) -> Result<Self, PayloadError> {
                Ok(match kind {
                    $( PayloadKind::$variant => Payload::$variant(parse(kind, bytes)?), )*
                })
            }
        }
    };
}

payload_kinds! {
    PolicyUpdate = 1 => SharingPolicy, RanControl;
    DeployRequest = 2 => DeployRequest, AiMgmt;
    DeployResult = 3 => DeployResult, AiMgmt;
    PreemptNotice = 4 => PreemptNotice, RanControl;
    CompleteNotice = 5 => CompleteNotice, AiMgmt;
    Telemetry = 6 => TelemetryReport, AiMgmt;
    CapacityQuery = 7 => CapacityQuery, AiMgmt;
    CapacityReply = 8 => CapacityReply, AiMgmt;
    RtAdmit = 9 => RtAdmissionRequest, AiMgmt;
    RtResult = 10 => RtResult, AiMgmt;
    Alarm = 11 => Alarm, RanControl;
    AuthRequest = 32 => AuthRequest, AiMgmt;
    AuthReply = 33 => AuthReply, AiMgmt;
    ValidateRequest = 34 => ValidateRequest, AiMgmt;
    ValidateReply = 35 => ValidateReply, AiMgmt;
    SubmitBatch = 36 => SubmitBatchRequest, AiMgmt;
    SubmitReply = 37 => SubmitReply, AiMgmt;
    JobStatus = 38 => JobStatusRequest, AiMgmt;
    JobStatusReply = 39 => JobStatusReply, AiMgmt;
    AdviceRequest = 40 => AdviceRequest, AiMgmt;
    AdviceReply = 41 => AdviceReply, AiMgmt;
    ErrorReply = 63 => ErrorReply, AiMgmt;
}

#[derive(Debug, Error)]
#[error("payload of kind {kind:?} does not parse: {source}")]
pub struct PayloadError {
    pub kind: PayloadKind,
    #[source]
    pub source: serde_json::Error,
}

fn parse<T: DeserializeOwned>(kind: PayloadKind, bytes: &[u8]) -> Result<T, PayloadError> {
    serde_json::from_slice(bytes).map_err(|source| PayloadError { kind, source })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub version: u8,
    pub qos_class: QosClass,
    pub seq: u64,
    pub sender: String,
    pub site: String,
    pub payload_kind: PayloadKind,
    pub payload: Vec<u8>,
}

impl Envelope {
    pub fn decode_payload(&self) -> Result<Payload, PayloadError> {
        Payload::from_bytes(self.payload_kind, &self.payload)
    }
}

/// Stamps outgoing envelopes with per-class sequence numbers for one sender.
#[derive(Debug, Clone)]
pub struct EnvelopeFactory {
    sender: String,
    next_seq: [u64; 2],
}

impl EnvelopeFactory {
    pub fn new(sender: impl Into<String>) -> Self {
        Self {
            sender: sender.into(),
            next_seq: [1, 1],
        }
    }

    pub fn sender(&self) -> &str {
        &self.sender
    }

    pub fn wrap(&mut self, site: &str, payload: &Payload) -> Envelope {
        let kind = payload.kind();
        let class = kind.qos_class();
        let seq = self.next_seq[class.index()];
        self.next_seq[class.index()] += 1;
        Envelope {
            version: PROTOCOL_VERSION,
            qos_class: class,
            seq,
            sender: self.sender.clone(),
            site: site.to_string(),
            payload_kind: kind,
            payload: payload.to_bytes(),
        }
    }
}

/// Receiver-side duplicate filter: accepts an envelope only if its seq is
/// above the last one seen for the same (sender, class).
#[derive(Debug, Clone, Default)]
pub struct SeqTracker {
    last: BTreeMap<(String, QosClass), u64>,
}

impl SeqTracker {
    pub fn accept(&mut self, env: &Envelope) -> bool {
        let key = (env.sender.clone(), env.qos_class);
        match self.last.get(&key) {
            Some(&last) if env.seq <= last => false,
            _ => {
                self.last.insert(key, env.seq);
                true
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployRequest {
    pub job_id: WorkloadId,
    pub descriptor: WorkloadDescriptor,
    pub node_id: NodeId,
    pub granted: ResourceVector,
    pub policy_version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefuseReason {
    StaleView,
    StalePolicy,
    UnknownNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeployOutcome {
    Ack { granted: ResourceVector },
    Refuse { reason: RefuseReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployResult {
    pub job_id: WorkloadId,
    pub site_id: SiteId,
    pub outcome: DeployOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreemptDisposition {
    /// Batch work goes back to the orchestrator's queue.
    Requeue,
    /// Real-time work is terminated.
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreemptNotice {
    pub site_id: SiteId,
    pub workload_id: WorkloadId,
    pub class: WorkloadClass,
    pub disposition: PreemptDisposition,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteNotice {
    pub site_id: SiteId,
    pub workload_id: WorkloadId,
    pub at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeUsage {
    pub node_id: NodeId,
    pub capacity: ResourceVector,
    pub used: ResourceVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryReport {
    pub site_id: SiteId,
    pub timestamp: SimTime,
    pub nodes: Vec<NodeUsage>,
    /// Full allocation state: per-workload grants, RAN demand, policy version.
    pub snapshot: SiteSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityQuery {
    pub token: AuthToken,
}

/// Per granted site, per node: AI headroom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReply {
    pub headroom: BTreeMap<SiteId, BTreeMap<NodeId, ResourceVector>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtAdmissionRequest {
    pub token: AuthToken,
    pub descriptor: WorkloadDescriptor,
    pub submitted_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RtOutcome {
    Deployed {
        handle: String,
        node_id: NodeId,
        grant: ResourceVector,
        admission_latency: SimTime,
    },
    NotAdmitted {
        reason: RtRejectReason,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtResult {
    pub site_id: SiteId,
    pub descriptor: WorkloadDescriptor,
    /// Sites the presented token granted, when it verified.
    #[serde(default)]
    pub token_sites: BTreeSet<SiteId>,
    pub outcome: RtOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub site_id: SiteId,
    pub at: SimTime,
    pub shortfall: ResourceVector,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthRequest {
    pub tenant: TenantId,
    pub credential: String,
    pub sites: BTreeSet<SiteId>,
    pub ceiling: ResourceVector,
    pub duration: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthReply {
    Granted(AuthToken),
    Denied { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub token: AuthToken,
    pub descriptor: WorkloadDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateReply {
    pub rejected: Option<RejectReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitBatchRequest {
    pub token: AuthToken,
    pub descriptor: WorkloadDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitReply {
    Accepted { job_id: WorkloadId },
    Rejected { reason: RejectReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatusRequest {
    pub job_id: WorkloadId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatusReply {
    pub record: Option<JobRecord>,
}

/// Asks for alternatives after a real-time rejection. Carries the site's
/// result so the orchestrator can record it if the site's own report has
/// not arrived yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceRequest {
    pub job_id: WorkloadId,
    #[serde(default)]
    pub report: Option<RtResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdviceReply {
    Advice(RejectionAdvice),
    NotFound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    pub message: String,
}
