//! Post-hoc invariant checks over live cluster state and finished replays.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{NodeId, Role, EPS};
use crate::inter::Cluster;

/// Counts of invariant violations found during a replay.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub residency_violations: usize,
    pub slo_violations: usize,
    pub leaked_nodes: usize,
    /// `|event integral - per-group sum| / max(event integral, 1)`.
    pub cost_relative_gap: f64,
    pub messages: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.residency_violations == 0
            && self.slo_violations == 0
            && self.leaked_nodes == 0
            && self.cost_relative_gap <= 1e-6
    }

    pub fn record_residency(&mut self, msgs: Vec<String>) {
        self.residency_violations += msgs.len();
        self.push(msgs);
    }

    pub fn record_slo(&mut self, msgs: Vec<String>) {
        self.slo_violations += msgs.len();
        self.push(msgs);
    }

    fn push(&mut self, msgs: Vec<String>) {
        // keep the log bounded on badly broken runs
        let room = 64usize.saturating_sub(self.messages.len());
        self.messages.extend(msgs.into_iter().take(room));
    }
}

/// Memory bookkeeping matches the placements, stays within capacity, and no
/// node belongs to two groups.
pub fn check_residency(cluster: &Cluster) -> Vec<String> {
    let mut out = Vec::new();
    let mut owner: BTreeMap<NodeId, u64> = BTreeMap::new();
    for g in cluster.groups().values() {
        let mut expect: BTreeMap<NodeId, f64> = g.nodes().map(|n| (n.id, 0.0)).collect();
        for (jid, p) in &g.placements {
            let job = &g.jobs[jid];
            for (role, ids) in [(Role::Rollout, &p.rollout_nodes), (Role::Training, &p.train_nodes)] {
                for id in ids {
                    match expect.get_mut(id) {
                        Some(v) => *v += job.phase(role).mem_footprint,
                        None => out.push(format!("{}: job {jid} pinned to foreign node {id}", g.id)),
                    }
                }
            }
        }
        for n in g.nodes() {
            if let Some(prev) = owner.insert(n.id, g.id.0) {
                out.push(format!("node {} owned by g{prev} and {}", n.id, g.id));
            }
            let want = expect[&n.id];
            if (n.host_mem_used - want).abs() > 1e-6 {
                out.push(format!("{}: node {} records {:.3} GB, placements need {want:.3} GB", g.id, n.id, n.host_mem_used));
            }
            if want > n.host_mem_capacity + EPS {
                out.push(format!("{}: node {} holds {want:.3} GB > {:.3} GB", g.id, n.id, n.host_mem_capacity));
            }
        }
        if g.jobs.is_empty() {
            out.push(format!("{} is empty but still provisioned", g.id));
        }
    }
    out
}

/// Every group meets every member's SLO under worst-case durations.
pub fn check_slo(cluster: &Cluster) -> Vec<String> {
    cluster
        .groups()
        .values()
        .filter(|g| !cluster.intra.slo_satisfied(g))
        .map(|g| {
            let ids: BTreeSet<_> = g.jobs.keys().map(|j| j.to_string()).collect();
            format!("{} violates an SLO with members {:?}", g.id, ids)
        })
        .collect()
}

/// Relative disagreement of two cost totals.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ClusterConfig, JobId, JobSpec};
    use crate::intra::IntraConfig;

    #[test]
    fn clean_cluster_passes() {
        let mut c = Cluster::new(ClusterConfig::default(), IntraConfig::default());
        for i in 0..4 {
            c.admit(&JobSpec::builder(i, 100.0 + 10.0 * i as f64, 60.0).slo(1.5).build().unwrap())
                .unwrap();
        }
        assert!(check_residency(&c).is_empty());
        assert!(check_slo(&c).is_empty());
        for i in 0..4 {
            c.depart(JobId(i)).unwrap();
        }
        assert_eq!(c.live_nodes(), 0);
    }

    #[test]
    fn detects_tampered_memory() {
        let mut c = Cluster::new(ClusterConfig::default(), IntraConfig::default());
        c.admit(&JobSpec::builder(0, 100.0, 60.0).build().unwrap()).unwrap();
        let mut g = c.groups().values().next().unwrap().clone();
        g.rollout_pool.values_mut().next().unwrap().host_mem_used = 5000.0;
        let mut broken = Cluster::new(ClusterConfig::default(), IntraConfig::default());
        broken.insert_group(g);
        assert_eq!(check_residency(&broken).len(), 1);
    }

    #[test]
    fn report_cleanliness() {
        let mut r = AuditReport::default();
        assert!(r.is_clean());
        r.cost_relative_gap = 1e-3;
        assert!(!r.is_clean());
        assert!(relative_gap(100.0, 100.0 + 1e-5) < 1e-6);
    }
}
