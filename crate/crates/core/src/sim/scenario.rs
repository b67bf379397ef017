//! Scenario documents: sites, links, intent, tenants and workload generators.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Intent, ResourceVector, SimTime, SiteId, TenantId};
use crate::o2::LinkConfig;
use crate::site::SiteConfig;
use crate::smo::TenantRecord;

/// Secret used when a scenario does not name one.
pub const DEFAULT_SECRET_HEX: &str = "5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a5a";

fn one() -> f64 {
    1.0
}

fn default_secret() -> String {
    DEFAULT_SECRET_HEX.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub site: SiteId,
    #[serde(flatten)]
    pub config: LinkConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub duration: SimTime,
    pub sites: Vec<SiteConfig>,
    /// Default SMO-site link; `links` overrides it per site.
    #[serde(default)]
    pub link: LinkConfig,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    pub intent: Intent,
    #[serde(default)]
    pub tenants: Vec<TenantRecord>,
    #[serde(default)]
    pub generators: Vec<Generator>,
    #[serde(default = "one")]
    pub epoch_period: SimTime,
    #[serde(default = "one")]
    pub sample_period: SimTime,
    #[serde(default = "default_secret")]
    pub secret: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Generator {
    DuTrace(DuTraceParams),
    Chatbot(ChatbotParams),
    BatchMix(BatchMixParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrafficPattern {
    Constant {
        fraction: f64,
    },
    /// Raised cosine between `low` and `high`, starting at the trough.
    Diurnal {
        period: SimTime,
        low: f64,
        high: f64,
    },
    /// Piecewise-constant `(time, fraction)` steps.
    Trace {
        points: Vec<(SimTime, f64)>,
    },
}

impl Default for TrafficPattern {
    fn default() -> Self {
        TrafficPattern::Diurnal {
            period: 120.0,
            low: 0.1,
            high: 1.0,
        }
    }
}

impl TrafficPattern {
    /// Offered traffic at `t` as a fraction of peak.
    pub fn fraction(&self, t: SimTime) -> f64 {
        match self {
            TrafficPattern::Constant { fraction } => *fraction,
            TrafficPattern::Diurnal { period, low, high } => {
                let phase = (std::f64::consts::TAU * t / period).cos();
                low + (high - low) * (1.0 - phase) / 2.0
            }
            TrafficPattern::Trace { points } => points
                .iter()
                .take_while(|(at, _)| *at <= t)
                .last()
                .map_or(0.0, |(_, f)| *f),
        }
    }
}

fn users() -> u32 {
    15
}
fn peak_mbps() -> f64 {
    1500.0
}
fn du_base() -> u64 {
    200
}
fn du_slope() -> u64 {
    800
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DuTraceParams {
    pub site: SiteId,
    #[serde(default = "users")]
    pub num_users: u32,
    #[serde(default = "peak_mbps")]
    pub peak_dl_mbps: f64,
    #[serde(default = "du_base")]
    pub base_accel_milli: u64,
    #[serde(default = "du_slope")]
    pub per_gbps_accel_milli: u64,
    #[serde(default)]
    pub pattern: TrafficPattern,
    /// Seconds between demand updates.
    #[serde(default = "one")]
    pub update_period: SimTime,
    /// Standard deviation of multiplicative noise on the offered fraction.
    #[serde(default)]
    pub jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum Duration {
    Deterministic { value: SimTime },
    Exponential { mean: SimTime },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrivals {
    Deterministic,
    #[default]
    Poisson,
}

fn rt_priority() -> u8 {
    3
}
fn client_delay() -> SimTime {
    0.001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatbotParams {
    pub site: SiteId,
    pub tenant: TenantId,
    pub credential: String,
    /// Requests per sim-second.
    pub rate: f64,
    #[serde(default)]
    pub arrivals: Arrivals,
    pub min: ResourceVector,
    pub preferred: ResourceVector,
    pub max: ResourceVector,
    pub service: Duration,
    #[serde(default = "rt_priority")]
    pub priority: u8,
    /// Client-to-site one-way delay.
    #[serde(default = "client_delay")]
    pub client_delay: SimTime,
    #[serde(default)]
    pub start: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchMixParams {
    pub tenant: TenantId,
    pub credential: String,
    pub sites: BTreeSet<SiteId>,
    pub count: u32,
    /// Submissions are spread uniformly over `[start, end)`.
    #[serde(default)]
    pub start: SimTime,
    pub end: SimTime,
    /// Inclusive accelerator demand range in milli-units.
    pub demand_accel_milli: (u64, u64),
    pub duration: (SimTime, SimTime),
    #[serde(default)]
    pub priority: (u8, u8),
    /// Probability that a job is elastic with `min = demand / 2`.
    #[serde(default)]
    pub elastic_fraction: f64,
    /// Deadline as a multiple of the estimated duration after submission.
    #[serde(default)]
    pub deadline_slack: Option<f64>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario does not parse at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn site(&self, id: &SiteId) -> Option<&SiteConfig> {
        self.sites.iter().find(|s| &s.site_id == id)
    }

    pub fn link_for(&self, site: &SiteId) -> LinkConfig {
        self.links
            .iter()
            .find(|l| &l.site == site)
            .map_or_else(|| self.link.clone(), |l| l.config.clone())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let non_negative = |x: f64| x.is_finite() && x >= 0.0;
        if !positive(self.duration) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        for (name, v) in [
            ("epoch_period", self.epoch_period),
            ("sample_period", self.sample_period),
        ] {
            if !positive(v) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if crate::auth::TokenSigner::from_hex(&self.secret).is_err() {
            return bad("secret must be 64 hex characters".into());
        }
        if let Err(e) = self.intent.validate() {
            return bad(e.to_string());
        }
        let mut ids = BTreeSet::new();
        for s in &self.sites {
            if !ids.insert(&s.site_id) {
                return bad(format!("duplicate site {}", s.site_id));
            }
            if s.nodes.is_empty() {
                return bad(format!("site {} has no nodes", s.site_id));
            }
            let mut nodes = BTreeSet::new();
            if !s.nodes.iter().all(|n| nodes.insert(&n.node_id)) {
                return bad(format!("site {} has duplicate node ids", s.site_id));
            }
            if !positive(s.telemetry_period) {
                return bad(format!("site {} telemetry_period must be positive", s.site_id));
            }
        }
        let known_site = |id: &SiteId, what: &str| -> Result<(), ScenarioError> {
            if ids.contains(id) {
                Ok(())
            } else {
                Err(ScenarioError::Invalid(format!("{what} references unknown site {id}")))
            }
        };
        for s in &self.intent.ai_enabled_sites {
            known_site(s, "intent")?;
        }
        for l in std::iter::once(&self.link).chain(self.links.iter().map(|l| &l.config)) {
            if !positive(l.bandwidth_bytes_per_s) || !non_negative(l.propagation_delay) {
                return bad("link bandwidth must be positive and delay non-negative".into());
            }
        }
        for l in &self.links {
            known_site(&l.site, "link")?;
        }
        let tenant = |t: &TenantId| -> Result<(), ScenarioError> {
            if self.tenants.iter().any(|r| &r.tenant_id == t) {
                Ok(())
            } else {
                Err(ScenarioError::Invalid(format!(
                    "generator references unknown tenant {t}"
                )))
            }
        };
        for (i, g) in self.generators.iter().enumerate() {
            match g {
                Generator::DuTrace(p) => {
                    known_site(&p.site, "DU_TRACE")?;
                    if !positive(p.update_period) || !non_negative(p.jitter) || !non_negative(p.peak_dl_mbps) {
                        return bad(format!("generator {i}: bad DU_TRACE parameters"));
                    }
                }
                Generator::Chatbot(p) => {
                    known_site(&p.site, "CHATBOT")?;
                    tenant(&p.tenant)?;
                    let bounds = p.min.fits_in(&p.preferred) && p.preferred.fits_in(&p.max);
                    let service = match p.service {
                        Duration::Deterministic { value } => positive(value),
                        Duration::Exponential { mean } => positive(mean),
                    };
                    if !positive(p.rate) || !bounds || !service || !non_negative(p.client_delay) {
                        return bad(format!("generator {i}: bad CHATBOT parameters"));
                    }
                }
                Generator::BatchMix(p) => {
                    for s in &p.sites {
                        known_site(s, "BATCH_MIX")?;
                    }
                    tenant(&p.tenant)?;
                    let ok = p.demand_accel_milli.0 <= p.demand_accel_milli.1
                        && positive(p.duration.0)
                        && p.duration.0 <= p.duration.1
                        && p.priority.0 <= p.priority.1
                        && p.priority.1 <= crate::model::MAX_PRIORITY
                        && p.start <= p.end
                        && (0.0..=1.0).contains(&p.elastic_fraction)
                        && p.deadline_slack.is_none_or(|s| s >= 1.0);
                    if !ok {
                        return bad(format!("generator {i}: bad BATCH_MIX parameters"));
                    }
                }
            }
        }
        Ok(())
    }
}
