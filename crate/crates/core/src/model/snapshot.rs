use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ids::{NodeId, SimTime, SiteId, WorkloadId};
use super::resources::ResourceVector;
use super::workload::WorkloadClass;

/// Operator intent consumed by the orchestrator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intent {
    /// Fraction of each site's capacity held back for RAN growth.
    pub ran_headroom_fraction: f64,
    /// Budget for real-time admission decisions, in seconds.
    pub max_rt_admission_latency: SimTime,
    pub ai_enabled_sites: BTreeSet<SiteId>,
}

#[derive(Debug, Error, PartialEq)]
#[error("ran_headroom_fraction {0} outside [0, 1]")]
pub struct IntentError(pub f64);

impl Intent {
    pub fn validate(&self) -> Result<(), IntentError> {
        if (0.0..=1.0).contains(&self.ran_headroom_fraction) {
            Ok(())
        } else {
            Err(IntentError(self.ran_headroom_fraction))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: NodeId,
    pub capacity: ResourceVector,
}

/// One grant on one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub workload_id: WorkloadId,
    pub class: WorkloadClass,
    pub priority: u8,
    pub granted: ResourceVector,
    pub admitted_at: SimTime,
}

/// A site's allocation state as seen at one instant. RAN demand appears as
/// `RAN`-class allocations spread over the nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSnapshot {
    pub site_id: SiteId,
    pub region: String,
    pub nodes: Vec<NodeSpec>,
    pub allocations: BTreeMap<NodeId, Vec<Allocation>>,
    pub policy_version: u64,
    pub ran_demand: ResourceVector,
    #[serde(default)]
    pub taken_at: SimTime,
    /// Set when RAN demand alone exceeds the site's capacity.
    #[serde(default)]
    pub alarm: bool,
}

impl SiteSnapshot {
    pub fn total_capacity(&self) -> ResourceVector {
        ResourceVector::sum(self.nodes.iter().map(|n| &n.capacity))
    }

    /// Largest single-node capacity, component-wise.
    pub fn largest_node(&self) -> ResourceVector {
        self.nodes
            .iter()
            .fold(ResourceVector::ZERO, |acc, n| acc.component_max(&n.capacity))
    }

    pub fn node_capacity(&self, node: &NodeId) -> Option<ResourceVector> {
        self.nodes.iter().find(|n| &n.node_id == node).map(|n| n.capacity)
    }

    pub fn node_used(&self, node: &NodeId) -> ResourceVector {
        self.allocations
            .get(node)
            .map(|a| ResourceVector::sum(a.iter().map(|x| &x.granted)))
            .unwrap_or_default()
    }

    pub fn node_free(&self, node: &NodeId) -> ResourceVector {
        self.node_capacity(node)
            .unwrap_or_default()
            .saturating_sub(&self.node_used(node))
    }

    pub fn used(&self) -> ResourceVector {
        ResourceVector::sum(self.iter_allocations().map(|(_, a)| &a.granted))
    }

    pub fn free(&self) -> ResourceVector {
        self.total_capacity().saturating_sub(&self.used())
    }

    pub fn ai_allocated(&self) -> ResourceVector {
        ResourceVector::sum(
            self.iter_allocations()
                .filter(|(_, a)| a.class.is_ai())
                .map(|(_, a)| &a.granted),
        )
    }

    pub fn ran_allocated(&self) -> ResourceVector {
        ResourceVector::sum(
            self.iter_allocations()
                .filter(|(_, a)| !a.class.is_ai())
                .map(|(_, a)| &a.granted),
        )
    }

    pub fn iter_allocations(&self) -> impl Iterator<Item = (&NodeId, &Allocation)> {
        self.allocations
            .iter()
            .flat_map(|(n, list)| list.iter().map(move |a| (n, a)))
    }

    pub fn find(&self, id: &WorkloadId) -> Option<(&NodeId, &Allocation)> {
        self.iter_allocations().find(|(_, a)| &a.workload_id == id)
    }

    /// Per-node capacity conservation.
    pub fn check_conservation(&self) -> Result<(), String> {
        for node in &self.nodes {
            let used = self.node_used(&node.node_id);
            if !used.fits_in(&node.capacity) {
                return Err(format!(
                    "site {} node {}: used {} exceeds capacity {}",
                    self.site_id, node.node_id, used, node.capacity
                ));
            }
        }
        if let Some(n) = self.allocations.keys().find(|n| self.node_capacity(n).is_none()) {
            return Err(format!("site {}: allocations on unknown node {n}", self.site_id));
        }
        Ok(())
    }
}
