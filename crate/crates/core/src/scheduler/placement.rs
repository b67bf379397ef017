//! Best-fit placement of queued batch jobs.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::policy::SharingPolicy;
use crate::model::{Elasticity, JobRecord, JobState, NodeId, ResourceVector, SiteId, SiteSnapshot, WorkloadId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedPlacement {
    pub workload_id: WorkloadId,
    pub site_id: SiteId,
    pub node_id: NodeId,
    pub granted: ResourceVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    InsufficientCapacity,
    /// The job is not in the `Queued` state or is not a batch job.
    NotQueued,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub placements: Vec<PlannedPlacement>,
    pub skipped: Vec<(WorkloadId, SkipReason)>,
}

impl PlacementPlan {
    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }
}

/// One node a workload could land on. `available` already folds in the
/// site's remaining AI quota.
#[derive(Debug, Clone)]
pub struct NodeCandidate {
    pub site_id: SiteId,
    pub node_id: NodeId,
    pub capacity: ResourceVector,
    pub available: ResourceVector,
}

/// Picks the node that leaves the least normalized headroom after the grant.
///
/// Nodes that can give `preferred` win over nodes that can only give a
/// clamped grant. Ties go to the lowest `(site_id, node_id)`.
pub fn best_fit(
    candidates: impl IntoIterator<Item = NodeCandidate>,
    elasticity: &Elasticity,
) -> Option<(NodeCandidate, ResourceVector)> {
    let preferred = elasticity.preferred();
    let mut best: Option<((bool, f64), NodeCandidate, ResourceVector)> = None;
    for cand in candidates {
        let Some(grant) = elasticity.grant_within(&cand.available) else {
            continue;
        };
        let key = (
            grant != preferred,
            cand.available.saturating_sub(&grant).normalized_sum(&cand.capacity),
        );
        let better = match &best {
            None => true,
            Some((bk, bc, _)) => match key.0.cmp(&bk.0).then(key.1.total_cmp(&bk.1)) {
                Ordering::Less => true,
                Ordering::Greater => false,
                Ordering::Equal => (&cand.site_id, &cand.node_id) < (&bc.site_id, &bc.node_id),
            },
        };
        if better {
            best = Some((key, cand, grant));
        }
    }
    best.map(|(_, c, g)| (c, g))
}

/// Queue processing order: priority descending, earliest deadline (none
/// last), then submission order.
pub fn queue_order(a: &JobRecord, b: &JobRecord) -> Ordering {
    b.workload
        .priority
        .cmp(&a.workload.priority)
        .then_with(|| match (a.workload.deadline, b.workload.deadline) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        })
        .then(a.seq.cmp(&b.seq))
}

/// Working view over sites: per-node free capacity and per-site AI quota left.
#[derive(Debug, Clone)]
pub(crate) struct CapacityView {
    pub sites: BTreeMap<SiteId, SiteView>,
}

#[derive(Debug, Clone)]
pub(crate) struct SiteView {
    pub region: String,
    pub quota_left: ResourceVector,
    pub nodes: BTreeMap<NodeId, (ResourceVector, ResourceVector)>,
}

impl CapacityView {
    pub fn new(snapshots: &BTreeMap<SiteId, SiteSnapshot>, policies: &BTreeMap<SiteId, SharingPolicy>) -> Self {
        let sites = snapshots
            .iter()
            .map(|(id, snap)| {
                let quota = match policies.get(id) {
                    Some(p) if !snap.alarm => p.ai_quota,
                    _ => ResourceVector::ZERO,
                };
                let nodes = snap
                    .nodes
                    .iter()
                    .map(|n| (n.node_id.clone(), (n.capacity, snap.node_free(&n.node_id))))
                    .collect();
                (
                    id.clone(),
                    SiteView {
                        region: snap.region.clone(),
                        quota_left: quota.saturating_sub(&snap.ai_allocated()),
                        nodes,
                    },
                )
            })
            .collect();
        Self { sites }
    }

    pub fn candidates(&self, job: &JobRecord) -> Vec<NodeCandidate> {
        self.sites
            .iter()
            .filter(|(id, s)| job.granted_sites.contains(*id) && job.workload.target.matches(id, &s.region))
            .flat_map(|(id, s)| {
                s.nodes.iter().map(move |(nid, (cap, free))| NodeCandidate {
                    site_id: id.clone(),
                    node_id: nid.clone(),
                    capacity: *cap,
                    available: free.component_min(&s.quota_left),
                })
            })
            .collect()
    }

    pub fn commit(&mut self, site: &SiteId, node: &NodeId, granted: &ResourceVector) {
        let s = self.sites.get_mut(site).expect("committed site exists in view");
        s.quota_left = s.quota_left.saturating_sub(granted);
        let n = s.nodes.get_mut(node).expect("committed node exists in view");
        n.1 = n.1.saturating_sub(granted);
    }
}

/// Places queued batch jobs where capacity and quota allow.
///
/// Jobs are visited in [`queue_order`]; each lands on the best-fit eligible
/// node (token scope, target filter, site quota, node capacity). Jobs that
/// fit nowhere are skipped with `insufficient-capacity`.
pub fn place_batch(
    queue: &[JobRecord],
    snapshots: &BTreeMap<SiteId, SiteSnapshot>,
    policies: &BTreeMap<SiteId, SharingPolicy>,
) -> PlacementPlan {
    let mut view = CapacityView::new(snapshots, policies);
    let mut order: Vec<&JobRecord> = queue.iter().collect();
    order.sort_by(|a, b| queue_order(a, b));

    let mut plan = PlacementPlan::default();
    for job in order {
        if job.state != JobState::Queued || job.workload.class != crate::model::WorkloadClass::AiBatch {
            plan.skipped.push((job.workload.id.clone(), SkipReason::NotQueued));
            continue;
        }
        match best_fit(view.candidates(job), &job.workload.elasticity) {
            Some((cand, granted)) => {
                view.commit(&cand.site_id, &cand.node_id, &granted);
                plan.placements.push(PlannedPlacement {
                    workload_id: job.workload.id.clone(),
                    site_id: cand.site_id,
                    node_id: cand.node_id,
                    granted,
                });
            }
            None => plan
                .skipped
                .push((job.workload.id.clone(), SkipReason::InsufficientCapacity)),
        }
    }
    plan
}

/// Checks that applying `plan` keeps every node within capacity and every
/// site within its AI quota.
pub fn verify_plan(
    plan: &PlacementPlan,
    snapshots: &BTreeMap<SiteId, SiteSnapshot>,
    policies: &BTreeMap<SiteId, SharingPolicy>,
) -> Result<(), String> {
    let mut node_add: BTreeMap<(&SiteId, &NodeId), ResourceVector> = BTreeMap::new();
    let mut site_add: BTreeMap<&SiteId, ResourceVector> = BTreeMap::new();
    for p in &plan.placements {
        let e = node_add.entry((&p.site_id, &p.node_id)).or_default();
        *e = e.saturating_add(&p.granted);
        let e = site_add.entry(&p.site_id).or_default();
        *e = e.saturating_add(&p.granted);
    }
    for ((site, node), add) in &node_add {
        let snap = snapshots.get(*site).ok_or_else(|| format!("unknown site {site}"))?;
        let cap = snap
            .node_capacity(node)
            .ok_or_else(|| format!("unknown node {site}/{node}"))?;
        if !snap.node_used(node).saturating_add(add).fits_in(&cap) {
            return Err(format!("node {site}/{node} over capacity"));
        }
    }
    for (site, add) in &site_add {
        let quota = policies.get(*site).map(|p| p.ai_quota).unwrap_or_default();
        if !snapshots[*site].ai_allocated().saturating_add(add).fits_in(&quota) {
            return Err(format!("site {site} over AI quota"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NodeSpec, Target, WorkloadClass, WorkloadDescriptor};
    use std::collections::BTreeSet;

    pub(crate) fn snapshot(site: &str, nodes: &[(&str, u64)]) -> SiteSnapshot {
        SiteSnapshot {
            site_id: site.into(),
            region: "r1".into(),
            nodes: nodes
                .iter()
                .map(|(n, c)| NodeSpec {
                    node_id: (*n).into(),
                    capacity: ResourceVector::accel(*c),
                })
                .collect(),
            allocations: BTreeMap::new(),
            policy_version: 1,
            ran_demand: ResourceVector::ZERO,
            taken_at: 0.0,
            alarm: false,
        }
    }

    fn policy(site: &str, quota: u64) -> SharingPolicy {
        SharingPolicy::new(
            site.into(),
            1,
            ResourceVector::ZERO,
            ResourceVector::accel(quota),
            true,
            0.0,
        )
    }

    fn queued(id: &str, elasticity: Elasticity, target: Target, sites: &[&str], seq: u64) -> JobRecord {
        let mut j = JobRecord::new(
            WorkloadDescriptor {
                id: id.into(),
                tenant: "t".into(),
                class: WorkloadClass::AiBatch,
                elasticity,
                target,
                priority: 1,
                deadline: None,
                est_duration: 10.0,
            },
            sites.iter().map(|s| SiteId::from(*s)).collect::<BTreeSet<_>>(),
            seq,
        );
        j.state = JobState::Queued;
        j
    }

    fn fixed(a: u64) -> Elasticity {
        Elasticity::NonElastic {
            demand: ResourceVector::accel(a),
        }
    }

    #[test]
    fn elastic_grant_clamped_to_headroom() {
        let snaps = BTreeMap::from([("s1".into(), snapshot("s1", &[("n1", 2000)]))]);
        let pols = BTreeMap::from([("s1".into(), policy("s1", 500))]);
        let job = queued(
            "j",
            Elasticity::Elastic {
                min: ResourceVector::accel(400),
                preferred: ResourceVector::accel(600),
                max: ResourceVector::accel(800),
            },
            Target::AnySite,
            &["s1"],
            0,
        );
        let plan = place_batch(&[job], &snaps, &pols);
        assert_eq!(plan.placements.len(), 1);
        assert_eq!(plan.placements[0].granted, ResourceVector::accel(500));
    }

    /// Enumerates every assignment of jobs to {skip, site...} with one node
    /// per site and returns, per site, the job counts of zero-skip outcomes.
    fn zero_skip_site_counts(demands: &[u64], headroom: &[u64]) -> BTreeSet<Vec<usize>> {
        let choices = headroom.len() + 1;
        let mut outcomes = BTreeSet::new();
        for code in 0..choices.pow(demands.len() as u32) {
            let mut c = code;
            let mut used = vec![0u64; headroom.len()];
            let mut counts = vec![0usize; headroom.len()];
            let mut skipped = 0;
            for d in demands {
                let pick = c % choices;
                c /= choices;
                if pick == 0 {
                    skipped += 1;
                } else {
                    used[pick - 1] += d;
                    counts[pick - 1] += 1;
                }
            }
            if skipped == 0 && used.iter().zip(headroom).all(|(u, h)| u <= h) {
                outcomes.insert(counts);
            }
        }
        outcomes
    }

    #[test]
    fn three_jobs_two_sites_unique_zero_skip_split() {
        let oracle = zero_skip_site_counts(&[700, 700, 700], &[800, 1400]);
        assert_eq!(oracle, BTreeSet::from([vec![1, 2]]));

        let snaps = BTreeMap::from([
            ("s1".into(), snapshot("s1", &[("n1", 2000)])),
            ("s2".into(), snapshot("s2", &[("n1", 2000)])),
        ]);
        let pols = BTreeMap::from([("s1".into(), policy("s1", 800)), ("s2".into(), policy("s2", 1400))]);
        let jobs: Vec<_> = (0..3)
            .map(|i| queued(&format!("j{i}"), fixed(700), Target::AnySite, &["s1", "s2"], i))
            .collect();
        let plan = place_batch(&jobs, &snaps, &pols);
        assert!(plan.skipped.is_empty());
        let on = |s: &str| plan.placements.iter().filter(|p| p.site_id.as_str() == s).count();
        assert_eq!((on("s1"), on("s2")), (1, 2));
        verify_plan(&plan, &snaps, &pols).unwrap();
    }

    #[test]
    fn site_target_never_spills() {
        let snaps = BTreeMap::from([
            ("x".into(), snapshot("x", &[("n1", 1000)])),
            ("y".into(), snapshot("y", &[("n1", 1000)])),
        ]);
        let pols = BTreeMap::from([("x".into(), policy("x", 0)), ("y".into(), policy("y", 1000))]);
        let job = queued("j", fixed(100), Target::Site("x".into()), &["x", "y"], 0);
        let plan = place_batch(&[job], &snaps, &pols);
        assert!(plan.placements.is_empty());
        assert_eq!(plan.skipped, vec![("j".into(), SkipReason::InsufficientCapacity)]);
    }

    #[test]
    fn token_scope_restricts_sites() {
        let snaps = BTreeMap::from([
            ("x".into(), snapshot("x", &[("n1", 1000)])),
            ("y".into(), snapshot("y", &[("n1", 1000)])),
        ]);
        let pols = BTreeMap::from([("x".into(), policy("x", 1000)), ("y".into(), policy("y", 1000))]);
        let job = queued("j", fixed(100), Target::AnySite, &["y"], 0);
        let plan = place_batch(&[job], &snaps, &pols);
        assert_eq!(plan.placements[0].site_id.as_str(), "y");
    }

    #[test]
    fn priority_then_deadline_then_fifo() {
        let mut a = queued("a", fixed(1), Target::AnySite, &[], 0);
        let mut b = queued("b", fixed(1), Target::AnySite, &[], 1);
        let c = queued("c", fixed(1), Target::AnySite, &[], 2);
        b.workload.deadline = Some(50.0);
        let mut v = [c.clone(), a.clone(), b.clone()];
        v.sort_by(queue_order);
        let ids: Vec<_> = v.iter().map(|j| j.workload.id.as_str().to_string()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
        a.workload.priority = 5;
        let mut v = [c, b, a];
        v.sort_by(queue_order);
        assert_eq!(v[0].workload.id.as_str(), "a");
    }

    #[test]
    fn best_fit_prefers_tighter_node_then_lowest_id() {
        let mk = |n: &str, avail: u64| NodeCandidate {
            site_id: "s".into(),
            node_id: n.into(),
            capacity: ResourceVector::accel(1000),
            available: ResourceVector::accel(avail),
        };
        let e = fixed(300);
        let (c, _) = best_fit(vec![mk("a", 900), mk("b", 400), mk("c", 400)], &e).unwrap();
        assert_eq!(c.node_id.as_str(), "b");
        assert!(best_fit(vec![mk("a", 100)], &e).is_none());
    }

    #[test]
    fn alarmed_or_unpoliced_site_gets_nothing() {
        let mut s = snapshot("s1", &[("n1", 1000)]);
        s.alarm = true;
        let snaps = BTreeMap::from([("s1".into(), s), ("s2".into(), snapshot("s2", &[("n1", 1000)]))]);
        let pols = BTreeMap::from([("s1".into(), policy("s1", 1000))]);
        let job = queued("j", fixed(1), Target::AnySite, &["s1", "s2"], 0);
        assert!(place_batch(&[job], &snaps, &pols).placements.is_empty());
    }
}
