//! Workload generators. Each stream is a pure function of the scenario
//! seed and the generator's index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::scenario::{Arrivals, BatchMixParams, ChatbotParams, DuTraceParams, Duration, Generator};
use crate::model::{Elasticity, ResourceVector, SimTime, SiteId, Target, WorkloadClass, WorkloadDescriptor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenAction {
    /// This generator's share of the site's RAN demand.
    RanDemand {
        site: SiteId,
        demand: ResourceVector,
    },
    RtRequest {
        descriptor: WorkloadDescriptor,
    },
    BatchSubmit {
        descriptor: WorkloadDescriptor,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenEvent {
    pub time: SimTime,
    pub generator: usize,
    pub action: GenAction,
}

pub fn rng_for(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// DU compute demand for an offered fraction of peak traffic.
pub fn du_demand(p: &DuTraceParams, fraction: f64, site_capacity: &ResourceVector) -> ResourceVector {
    let gbps = fraction.max(0.0) * p.peak_dl_mbps / 1000.0;
    let accel = p.base_accel_milli as f64 + p.per_gbps_accel_milli as f64 * gbps;
    ResourceVector::accel(accel.round() as u64).component_min(site_capacity)
}

/// Expands one generator into its timestamped events within `[0, duration)`.
pub fn generate_events(
    generator: &Generator,
    index: usize,
    seed: u64,
    duration: SimTime,
    site_capacity: impl Fn(&SiteId) -> ResourceVector,
) -> Vec<GenEvent> {
    let mut rng = rng_for(seed, index);
    let ev = |time, action| GenEvent {
        time,
        generator: index,
        action,
    };
    match generator {
        Generator::DuTrace(p) => {
            let cap = site_capacity(&p.site);
            let noise = (p.jitter > 0.0).then(|| Normal::new(1.0, p.jitter).expect("jitter validated"));
            let mut out = Vec::new();
            let mut step = 0u64;
            loop {
                let t = step as f64 * p.update_period;
                if t >= duration {
                    break;
                }
                let mut f = p.pattern.fraction(t);
                if let Some(n) = &noise {
                    f *= n.sample(&mut rng);
                }
                let f = f.clamp(0.0, 1.0);
                out.push(ev(
                    t,
                    GenAction::RanDemand {
                        site: p.site.clone(),
                        demand: du_demand(p, f, &cap),
                    },
                ));
                step += 1;
            }
            out
        }
        Generator::Chatbot(p) => chatbot(p, index, &mut rng, duration)
            .into_iter()
            .map(|(t, d)| ev(t, GenAction::RtRequest { descriptor: d }))
            .collect(),
        Generator::BatchMix(p) => batch_mix(p, index, &mut rng, duration)
            .into_iter()
            .map(|(t, d)| ev(t, GenAction::BatchSubmit { descriptor: d }))
            .collect(),
    }
}

fn sample_duration(d: &Duration, rng: &mut ChaCha8Rng) -> SimTime {
    match *d {
        Duration::Deterministic { value } => value,
        Duration::Exponential { mean } => Exp::new(1.0 / mean).expect("mean validated").sample(rng).max(1e-6),
    }
}

fn chatbot(
    p: &ChatbotParams,
    index: usize,
    rng: &mut ChaCha8Rng,
    duration: SimTime,
) -> Vec<(SimTime, WorkloadDescriptor)> {
    let gap = Exp::new(p.rate).expect("rate validated");
    let mut out = Vec::new();
    let mut t = p.start;
    let mut n = 0u64;
    while t < duration {
        let descriptor = WorkloadDescriptor {
            id: format!("chat{index}-{n}").into(),
            tenant: p.tenant.clone(),
            class: WorkloadClass::AiRealtime,
            elasticity: Elasticity::Elastic {
                min: p.min,
                preferred: p.preferred,
                max: p.max,
            },
            target: Target::Site(p.site.clone()),
            priority: p.priority,
            deadline: None,
            est_duration: sample_duration(&p.service, rng),
        };
        out.push((t, descriptor));
        n += 1;
        t = match p.arrivals {
            Arrivals::Deterministic => p.start + n as f64 / p.rate,
            Arrivals::Poisson => t + gap.sample(rng),
        };
    }
    out
}

fn batch_mix(
    p: &BatchMixParams,
    index: usize,
    rng: &mut ChaCha8Rng,
    duration: SimTime,
) -> Vec<(SimTime, WorkloadDescriptor)> {
    let mut out: Vec<(SimTime, WorkloadDescriptor)> = (0..p.count)
        .map(|n| {
            let t = if p.end > p.start {
                rng.gen_range(p.start..p.end)
            } else {
                p.start
            };
            let demand = rng.gen_range(p.demand_accel_milli.0..=p.demand_accel_milli.1);
            let est = if p.duration.1 > p.duration.0 {
                rng.gen_range(p.duration.0..p.duration.1)
            } else {
                p.duration.0
            };
            let priority = rng.gen_range(p.priority.0..=p.priority.1);
            let elastic = rng.gen_bool(p.elastic_fraction);
            let rv = ResourceVector::accel(demand);
            let elasticity = if elastic {
                Elasticity::Elastic {
                    min: ResourceVector::accel(demand / 2),
                    preferred: rv,
                    max: rv,
                }
            } else {
                Elasticity::NonElastic { demand: rv }
            };
            let descriptor = WorkloadDescriptor {
                id: format!("batch{index}-{n}").into(),
                tenant: p.tenant.clone(),
                class: WorkloadClass::AiBatch,
                elasticity,
                target: crate::model::Target::AnySite,
                priority,
                deadline: p.deadline_slack.map(|s| t + s * est),
                est_duration: est,
            };
            (t, descriptor)
        })
        .filter(|(t, _)| *t < duration)
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}
