//! Workload descriptors: what a RAN or AI task asks of the infrastructure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ids::{SimTime, SiteId, TenantId, WorkloadId};
use super::resources::ResourceVector;

/// Highest priority tier. RAN workloads always carry it.
pub const MAX_PRIORITY: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WorkloadClass {
    Ran,
    AiRealtime,
    AiBatch,
}

impl WorkloadClass {
    pub fn is_ai(self) -> bool {
        !matches!(self, WorkloadClass::Ran)
    }
}

/// Demand shape. RAN processing is non-elastic; AI work can run anywhere
/// between `min` and `max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Elasticity {
    NonElastic {
        demand: ResourceVector,
    },
    Elastic {
        min: ResourceVector,
        preferred: ResourceVector,
        max: ResourceVector,
    },
}

impl Elasticity {
    pub fn min(&self) -> ResourceVector {
        match *self {
            Elasticity::NonElastic { demand } => demand,
            Elasticity::Elastic { min, .. } => min,
        }
    }

    pub fn preferred(&self) -> ResourceVector {
        match *self {
            Elasticity::NonElastic { demand } => demand,
            Elasticity::Elastic { preferred, .. } => preferred,
        }
    }

    /// Largest grant the workload may hold; compared against token ceilings.
    pub fn max(&self) -> ResourceVector {
        match *self {
            Elasticity::NonElastic { demand } => demand,
            Elasticity::Elastic { max, .. } => max,
        }
    }

    /// Chooses a grant given the largest vector available: `preferred` when
    /// it fits, otherwise `available` clamped to `[min, preferred]`, or
    /// `None` when not even `min` fits.
    pub fn grant_within(&self, available: &ResourceVector) -> Option<ResourceVector> {
        let preferred = self.preferred();
        if preferred.fits_in(available) {
            return Some(preferred);
        }
        let grant = preferred.component_min(available);
        self.min().fits_in(&grant).then_some(grant)
    }

    /// Whether `granted` respects the elasticity bounds.
    pub fn admits_grant(&self, granted: &ResourceVector) -> bool {
        self.min().fits_in(granted) && granted.fits_in(&self.max())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    AnySite,
    Site(SiteId),
    Region(String),
}

impl Target {
    pub fn matches(&self, site: &SiteId, region: &str) -> bool {
        match self {
            Target::AnySite => true,
            Target::Site(s) => s == site,
            Target::Region(r) => r == region,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DescriptorError {
    #[error("RAN workloads must be non-elastic")]
    ElasticRan,
    #[error("RAN workloads must have priority {MAX_PRIORITY}")]
    RanPriority,
    #[error("elastic bounds must satisfy min <= preferred <= max")]
    ElasticBounds,
    #[error("real-time AI workloads must target a site or region")]
    RealtimeTarget,
    #[error("priority {0} outside 0..={MAX_PRIORITY}")]
    PriorityRange(u8),
    #[error("only batch AI workloads may carry a deadline")]
    DeadlineClass,
    #[error("estimated duration must be finite and positive")]
    Duration,
    #[error("workload id must not be empty")]
    EmptyId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadDescriptor {
    pub id: WorkloadId,
    pub tenant: TenantId,
    pub class: WorkloadClass,
    pub elasticity: Elasticity,
    pub target: Target,
    pub priority: u8,
    #[serde(default)]
    pub deadline: Option<SimTime>,
    pub est_duration: SimTime,
}

impl WorkloadDescriptor {
    pub fn validate(&self) -> Result<(), DescriptorError> {
        if self.id.as_str().is_empty() {
            return Err(DescriptorError::EmptyId);
        }
        if self.priority > MAX_PRIORITY {
            return Err(DescriptorError::PriorityRange(self.priority));
        }
        if let Elasticity::Elastic { min, preferred, max } = &self.elasticity {
            if !(min.fits_in(preferred) && preferred.fits_in(max)) {
                return Err(DescriptorError::ElasticBounds);
            }
        }
        match self.class {
            WorkloadClass::Ran => {
                if matches!(self.elasticity, Elasticity::Elastic { .. }) {
                    return Err(DescriptorError::ElasticRan);
                }
                if self.priority != MAX_PRIORITY {
                    return Err(DescriptorError::RanPriority);
                }
            }
            WorkloadClass::AiRealtime => {
                if matches!(self.target, Target::AnySite) {
                    return Err(DescriptorError::RealtimeTarget);
                }
            }
            WorkloadClass::AiBatch => {}
        }
        if self.deadline.is_some() && self.class != WorkloadClass::AiBatch {
            return Err(DescriptorError::DeadlineClass);
        }
        if !(self.est_duration.is_finite() && self.est_duration > 0.0) {
            return Err(DescriptorError::Duration);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(elasticity: Elasticity) -> WorkloadDescriptor {
        WorkloadDescriptor {
            id: "j1".into(),
            tenant: "t".into(),
            class: WorkloadClass::AiBatch,
            elasticity,
            target: Target::AnySite,
            priority: 3,
            deadline: Some(100.0),
            est_duration: 10.0,
        }
    }

    #[test]
    fn grant_clamps_between_min_and_preferred() {
        let e = Elasticity::Elastic {
            min: ResourceVector::accel(400),
            preferred: ResourceVector::accel(600),
            max: ResourceVector::accel(800),
        };
        assert_eq!(
            e.grant_within(&ResourceVector::accel(500)),
            Some(ResourceVector::accel(500))
        );
        assert_eq!(
            e.grant_within(&ResourceVector::accel(900)),
            Some(ResourceVector::accel(600))
        );
        assert_eq!(e.grant_within(&ResourceVector::accel(399)), None);
    }

    #[test]
    fn descriptor_invariants() {
        let ok = batch(Elasticity::NonElastic {
            demand: ResourceVector::accel(100),
        });
        assert_eq!(ok.validate(), Ok(()));

        let bad = batch(Elasticity::Elastic {
            min: ResourceVector::accel(500),
            preferred: ResourceVector::accel(400),
            max: ResourceVector::accel(300),
        });
        assert_eq!(bad.validate(), Err(DescriptorError::ElasticBounds));

        let mut ran = ok.clone();
        ran.class = WorkloadClass::Ran;
        ran.deadline = None;
        assert_eq!(ran.validate(), Err(DescriptorError::RanPriority));
        ran.priority = MAX_PRIORITY;
        assert_eq!(ran.validate(), Ok(()));

        let mut rt = ok.clone();
        rt.class = WorkloadClass::AiRealtime;
        rt.deadline = None;
        assert_eq!(rt.validate(), Err(DescriptorError::RealtimeTarget));
        rt.target = Target::Site("s1".into());
        assert_eq!(rt.validate(), Ok(()));
    }

    #[test]
    fn serialized_field_names_match_types() {
        let d = batch(Elasticity::NonElastic {
            demand: ResourceVector::accel(100),
        });
        let v = serde_json::to_value(&d).unwrap();
        assert_eq!(v["class"], "AI_BATCH");
        assert_eq!(v["elasticity"]["non_elastic"]["demand"]["accel_milli"], 100);
        assert_eq!(v["target"], "any_site");
        let back: WorkloadDescriptor = serde_json::from_value(v).unwrap();
        assert_eq!(back, d);
    }
}
