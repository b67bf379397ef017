//! Simulated two-class link with strict-priority, non-preemptive framing.
//!
//! The link is poll-driven: callers `send` at non-decreasing times and
//! `poll` to collect frames whose delivery time has passed. Transmission
//! decisions are made lazily but exactly: when the link frees up at time
//! `f`, the head RAN_CONTROL frame wins if it had arrived by `f`, otherwise
//! the head AI_MGMT frame, otherwise whichever arrives first.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::codec::{self, CodecError};
use super::messages::{Envelope, QosClass};
use crate::model::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Serialization rate in bytes per second.
    pub bandwidth_bytes_per_s: f64,
    /// One-way propagation delay in seconds.
    pub propagation_delay: SimTime,
    /// Queue capacity in frames, RAN_CONTROL.
    pub ran_queue_capacity: usize,
    /// Queue capacity in frames, AI_MGMT.
    pub ai_queue_capacity: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            bandwidth_bytes_per_s: 12.5e6,
            propagation_delay: 0.002,
            ran_queue_capacity: 1024,
            ai_queue_capacity: 1024,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("RAN_CONTROL queue overflow ({0} frames)")]
    RanControlOverflow(usize),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub envelope: Envelope,
    pub frame_len: usize,
    pub enqueued_at: SimTime,
    pub tx_start: SimTime,
    pub delivered_at: SimTime,
    /// Bytes of same-class frames queued ahead at enqueue time.
    pub backlog_ahead_bytes: usize,
}

impl Delivery {
    pub fn class(&self) -> QosClass {
        self.envelope.qos_class
    }

    pub fn queueing_delay(&self) -> SimTime {
        self.tx_start - self.enqueued_at
    }

    pub fn total_delay(&self) -> SimTime {
        self.delivered_at - self.enqueued_at
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub sent: [u64; 2],
    pub delivered: [u64; 2],
    pub dropped_ai: u64,
    pub max_frame_len: usize,
}

#[derive(Debug, Clone)]
struct Pending {
    frame: Vec<u8>,
    class: QosClass,
    enqueued_at: SimTime,
    backlog_ahead_bytes: usize,
}

#[derive(Debug, Clone)]
struct InFlight {
    pending: Pending,
    start: SimTime,
    finish: SimTime,
}

#[derive(Debug, Clone)]
pub struct SimLink {
    cfg: LinkConfig,
    queues: [VecDeque<Pending>; 2],
    queued_bytes: [usize; 2],
    in_flight: Option<InFlight>,
    free_at: SimTime,
    propagating: VecDeque<Delivery>,
    stats: LinkStats,
}

impl SimLink {
    pub fn new(cfg: LinkConfig) -> Self {
        Self {
            cfg,
            queues: [VecDeque::new(), VecDeque::new()],
            queued_bytes: [0, 0],
            in_flight: None,
            free_at: 0.0,
            propagating: VecDeque::new(),
            stats: LinkStats::default(),
        }
    }

    pub fn config(&self) -> &LinkConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &LinkStats {
        &self.stats
    }

    pub fn serialization_time(&self, bytes: usize) -> SimTime {
        bytes as f64 / self.cfg.bandwidth_bytes_per_s
    }

    pub fn queued(&self, class: QosClass) -> usize {
        self.queues[class.index()].len()
    }

    pub fn is_idle(&self) -> bool {
        self.in_flight.is_none() && self.propagating.is_empty() && self.queues.iter().all(VecDeque::is_empty)
    }

    /// Enqueues `env` at `now`. AI_MGMT overflow drops the oldest AI_MGMT
    /// frame; RAN_CONTROL overflow is an error and nothing is enqueued.
    pub fn send(&mut self, env: &Envelope, now: SimTime) -> Result<(), LinkError> {
        let frame = codec::encode(env)?;
        self.advance(now, false);
        let class = env.qos_class;
        let i = class.index();
        match class {
            QosClass::RanControl if self.queues[i].len() >= self.cfg.ran_queue_capacity => {
                return Err(LinkError::RanControlOverflow(self.queues[i].len()));
            }
            QosClass::AiMgmt if self.queues[i].len() >= self.cfg.ai_queue_capacity => {
                if let Some(dropped) = self.queues[i].pop_front() {
                    self.queued_bytes[i] -= dropped.frame.len();
                    self.stats.dropped_ai += 1;
                    log::debug!("AI_MGMT queue full, dropped oldest frame");
                }
                if self.cfg.ai_queue_capacity == 0 {
                    self.stats.dropped_ai += 1;
                    return Ok(());
                }
            }
            _ => {}
        }
        self.stats.sent[i] += 1;
        self.stats.max_frame_len = self.stats.max_frame_len.max(frame.len());
        let backlog_ahead_bytes = self.queued_bytes[i];
        self.queued_bytes[i] += frame.len();
        self.queues[i].push_back(Pending {
            frame,
            class,
            enqueued_at: now,
            backlog_ahead_bytes,
        });
        Ok(())
    }

    /// Frames delivered at or before `now`, in delivery order.
    pub fn poll(&mut self, now: SimTime) -> Vec<Delivery> {
        self.advance(now, true);
        let mut out = Vec::new();
        while self.propagating.front().is_some_and(|d| d.delivered_at <= now) {
            let d = self.propagating.pop_front().unwrap();
            self.stats.delivered[d.class().index()] += 1;
            out.push(d);
        }
        out
    }

    /// Earliest time at which `poll` could return something.
    pub fn next_wakeup(&self) -> Option<SimTime> {
        if let Some(d) = self.propagating.front() {
            return Some(d.delivered_at);
        }
        if let Some(f) = &self.in_flight {
            return Some(f.finish + self.cfg.propagation_delay);
        }
        self.choose_next().map(|(class, start)| {
            let len = self.queues[class.index()].front().unwrap().frame.len();
            start + self.serialization_time(len) + self.cfg.propagation_delay
        })
    }

    fn choose_next(&self) -> Option<(QosClass, SimTime)> {
        let ran = self.queues[0].front().map(|p| p.enqueued_at);
        let ai = self.queues[1].front().map(|p| p.enqueued_at);
        let f = self.free_at;
        match (ran, ai) {
            (None, None) => None,
            (Some(r), _) if r <= f => Some((QosClass::RanControl, f)),
            (_, Some(a)) if a <= f => Some((QosClass::AiMgmt, f)),
            (Some(r), Some(a)) if a < r => Some((QosClass::AiMgmt, a)),
            (Some(r), _) => Some((QosClass::RanControl, r)),
            (None, Some(a)) => Some((QosClass::AiMgmt, a)),
        }
    }

    /// Runs the transmitter up to `t`. With `inclusive == false` no frame
    /// starts exactly at `t`, so a frame enqueued at `t` still competes.
    fn advance(&mut self, t: SimTime, inclusive: bool) {
        loop {
            if let Some(f) = &self.in_flight {
                if f.finish > t {
                    return;
                }
                let f = self.in_flight.take().unwrap();
                self.free_at = f.finish;
                let (envelope, _) = codec::decode(&f.pending.frame).expect("frames on the link were encoded by send");
                self.propagating.push_back(Delivery {
                    envelope,
                    frame_len: f.pending.frame.len(),
                    enqueued_at: f.pending.enqueued_at,
                    tx_start: f.start,
                    delivered_at: f.finish + self.cfg.propagation_delay,
                    backlog_ahead_bytes: f.pending.backlog_ahead_bytes,
                });
            }
            let Some((class, start)) = self.choose_next() else {
                return;
            };
            if start > t || (!inclusive && start >= t) {
                return;
            }
            let i = class.index();
            let pending = self.queues[i].pop_front().unwrap();
            self.queued_bytes[i] -= pending.frame.len();
            debug_assert_eq!(pending.class, class);
            let finish = start + self.serialization_time(pending.frame.len());
            self.in_flight = Some(InFlight { pending, start, finish });
        }
    }
}
