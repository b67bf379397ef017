//! Time series and summary statistics collected during a run.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{SimTime, SiteId};
use crate::o2::{Delivery, QosClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilSample {
    pub time: SimTime,
    pub site: SiteId,
    pub ran_milli: u64,
    pub ai_milli: u64,
    pub capacity_milli: u64,
    pub queue_depth: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassDelay {
    pub frames: u64,
    pub total_delay: f64,
    pub max_queueing_delay: f64,
}

impl ClassDelay {
    pub fn mean(&self) -> Option<f64> {
        (self.frames > 0).then(|| self.total_delay / self.frames as f64)
    }
}

/// Raw counters and samples, appended to as the run proceeds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub duration: SimTime,
    pub events: u64,
    pub samples: Vec<UtilSample>,
    pub rt_requests: u64,
    pub rt_admitted: u64,
    pub rt_rejected: BTreeMap<String, u64>,
    pub admission_latency_sum: f64,
    pub advice_resubmit_as_batch: u64,
    pub advice_alternate_site: u64,
    pub preemptions: BTreeMap<String, u64>,
    pub batch_submitted: u64,
    pub batch_submit_rejected: BTreeMap<String, u64>,
    pub batch_reached_running: u64,
    pub batch_completed: u64,
    pub batch_deadline_rejected: u64,
    pub alarms: u64,
    pub ran_violations: u64,
    pub invariant_failures: u64,
    pub link_errors: u64,
    pub ai_frames_dropped: u64,
    pub delay_ran_control: ClassDelay,
    pub delay_ai_mgmt: ClassDelay,
}

impl MetricsLog {
    pub fn record_delivery(&mut self, d: &Delivery) {
        let c = match d.class() {
            QosClass::RanControl => &mut self.delay_ran_control,
            QosClass::AiMgmt => &mut self.delay_ai_mgmt,
        };
        c.frames += 1;
        c.total_delay += d.total_delay();
        c.max_queueing_delay = c.max_queueing_delay.max(d.queueing_delay());
    }

    /// One row per sample: `time,site,ran_milli,ai_milli,capacity_milli`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time,site,ran_milli,ai_milli,capacity_milli\n");
        for s in &self.samples {
            writeln!(
                out,
                "{:.3},{},{},{},{}",
                s.time, s.site, s.ran_milli, s.ai_milli, s.capacity_milli
            )
            .expect("writing to a String");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub duration: SimTime,
    pub events: u64,
    pub samples: u64,
    /// Samples where RAN + AI exceeded capacity. Must be zero.
    pub over_capacity_samples: u64,
    pub peak_utilization_milli: BTreeMap<SiteId, u64>,
    pub ran_violations: u64,
    pub rt_requests: u64,
    pub rt_admitted: u64,
    pub rt_rejected: BTreeMap<String, u64>,
    pub acceptance_ratio: f64,
    /// No real-time requests were made; the ratio is reported as 1.0.
    pub acceptance_denominator_zero: bool,
    pub mean_admission_latency: Option<f64>,
    pub advice_resubmit_as_batch: u64,
    pub advice_alternate_site: u64,
    pub preemptions: u64,
    pub preemptions_by_class: BTreeMap<String, u64>,
    pub batch_submitted: u64,
    pub batch_submit_rejected: BTreeMap<String, u64>,
    pub batch_reached_running: u64,
    pub batch_completed: u64,
    pub batch_deadline_rejected: u64,
    pub alarms: u64,
    pub invariant_failures: u64,
    pub link_errors: u64,
    pub ai_frames_dropped: u64,
    pub mean_delay_ran_control: Option<f64>,
    pub mean_delay_ai_mgmt: Option<f64>,
    pub max_queueing_delay_ran_control: f64,
}

impl Summary {
    /// A run is healthy when RAN was always served and no invariant broke.
    pub fn healthy(&self) -> bool {
        self.ran_violations == 0 && self.invariant_failures == 0 && self.over_capacity_samples == 0 && self.alarms == 0
    }
}

pub fn summarize(log: &MetricsLog) -> Summary {
    let mut peak: BTreeMap<SiteId, u64> = BTreeMap::new();
    let mut over = 0;
    for s in &log.samples {
        let total = s.ran_milli + s.ai_milli;
        if total > s.capacity_milli {
            over += 1;
        }
        let p = peak.entry(s.site.clone()).or_default();
        *p = (*p).max(total);
    }
    let zero = log.rt_requests == 0;
    Summary {
        duration: log.duration,
        events: log.events,
        samples: log.samples.len() as u64,
        over_capacity_samples: over,
        peak_utilization_milli: peak,
        ran_violations: log.ran_violations,
        rt_requests: log.rt_requests,
        rt_admitted: log.rt_admitted,
        rt_rejected: log.rt_rejected.clone(),
        acceptance_ratio: if zero {
            1.0
        } else {
            log.rt_admitted as f64 / log.rt_requests as f64
        },
        acceptance_denominator_zero: zero,
        mean_admission_latency: (log.rt_admitted > 0).then(|| log.admission_latency_sum / log.rt_admitted as f64),
        advice_resubmit_as_batch: log.advice_resubmit_as_batch,
        advice_alternate_site: log.advice_alternate_site,
        preemptions: log.preemptions.values().sum(),
        preemptions_by_class: log.preemptions.clone(),
        batch_submitted: log.batch_submitted,
        batch_submit_rejected: log.batch_submit_rejected.clone(),
        batch_reached_running: log.batch_reached_running,
        batch_completed: log.batch_completed,
        batch_deadline_rejected: log.batch_deadline_rejected,
        alarms: log.alarms,
        invariant_failures: log.invariant_failures,
        link_errors: log.link_errors,
        ai_frames_dropped: log.ai_frames_dropped,
        mean_delay_ran_control: log.delay_ran_control.mean(),
        mean_delay_ai_mgmt: log.delay_ai_mgmt.mean(),
        max_queueing_delay_ran_control: log.delay_ran_control.max_queueing_delay,
    }
}
