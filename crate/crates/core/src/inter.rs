//! Online inter-group placement: candidate generation, saturation pruning,
//! memory and SLO feasibility, and marginal-cost minimization.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cost::{group_cost, marginal_cost};
use crate::domain::{
    residency_feasible, ClusterConfig, CoExecGroup, GroupId, JobId, JobSpec, Node, NodeId, Placement, Role, EPS,
};
use crate::error::{Error, Result};
use crate::intra::{group_load, is_saturated, IntraConfig};

/// Upper bound on direct-packing node subsets tried per group.
pub const MAX_PACKING_CANDIDATES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    DirectPacking,
    RolloutScaling,
    IsolatedProvisioning,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::DirectPacking => "direct_packing",
            Strategy::RolloutScaling => "rollout_scaling",
            Strategy::IsolatedProvisioning => "isolated_provisioning",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Existing(GroupId),
    New,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementCandidate {
    pub strategy: Strategy,
    pub target_group: Target,
    pub placement: Placement,
    /// $/h added to the cluster bill.
    pub delta_cost: f64,
    /// Nodes that must be provisioned for this candidate.
    pub new_nodes: Vec<Node>,
}

impl PlacementCandidate {
    /// The group after admitting `job`; `base` is the target group, or an
    /// empty group for isolated provisioning.
    pub fn apply(&self, base: &CoExecGroup, job: &JobSpec) -> Result<CoExecGroup> {
        let mut g = base.clone();
        for n in &self.new_nodes {
            g.add_node(n.clone());
        }
        g.admit(job.clone(), self.placement.clone())?;
        Ok(g)
    }
}

/// One admission, as written to the decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub job: JobId,
    pub strategy: Strategy,
    pub group: GroupId,
    pub delta_cost: f64,
    pub candidates_evaluated: usize,
    pub latency_us: u64,
}

fn fresh_nodes(cfg: &ClusterConfig, first: NodeId, role: Role, count: usize) -> Vec<Node> {
    (0..count as u64)
        .map(|k| cfg.new_node(NodeId(first.0 + k), role))
        .collect()
}

/// Rollout nodes with spare load, best fit first.
fn packable_nodes(group: &CoExecGroup, job: &JobSpec) -> Vec<NodeId> {
    let cycle = group_load(group).cycle.max(job.solo_time());
    let roll = job.rollout.worst_case_duration;
    let mut nodes: Vec<(bool, f64, NodeId)> = group
        .rollout_node_loads()
        .into_iter()
        .filter(|&(_, load)| load < cycle - EPS * cycle.max(1.0))
        .map(|(id, load)| {
            let residual = cycle - load - roll;
            (residual < -EPS, residual.abs(), id)
        })
        .collect();
    nodes.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    nodes.into_iter().map(|n| n.2).collect()
}

/// Visits `k`-subsets of `0..n` in lexicographic order until `f` returns false.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize]) -> bool) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        if !f(&idx) {
            return;
        }
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Direct-packing and rollout-scaling candidates for `job` in `group`.
/// Scaled-in nodes get consecutive ids from `first_new_node`.
pub fn generate_placements(
    cfg: &ClusterConfig,
    group: &CoExecGroup,
    job: &JobSpec,
    first_new_node: NodeId,
) -> Vec<PlacementCandidate> {
    let k = cfg.nodes_for(job.rollout.gpus_required);
    let train: Vec<NodeId> = group.train_pool.keys().copied().collect();
    let target = Target::Existing(group.id);
    let packable = packable_nodes(group, job);
    let mut out: Vec<PlacementCandidate> = Vec::new();

    for_each_combination(packable.len(), k, |idx| {
        out.push(PlacementCandidate {
            strategy: Strategy::DirectPacking,
            target_group: target,
            placement: Placement::new(job.id, idx.iter().map(|&i| packable[i]), train.iter().copied()),
            delta_cost: 0.0,
            new_nodes: Vec::new(),
        });
        out.len() < MAX_PACKING_CANDIDATES
    });

    let node_cost = cfg.node_hourly_cost(Role::Rollout);
    for added in 1..=k {
        let reuse = k - added;
        if reuse > packable.len() {
            continue;
        }
        let new_nodes = fresh_nodes(cfg, first_new_node, Role::Rollout, added);
        let roll = packable[..reuse]
            .iter()
            .copied()
            .chain(new_nodes.iter().map(|n| n.id));
        out.push(PlacementCandidate {
            strategy: Strategy::RolloutScaling,
            target_group: target,
            placement: Placement::new(job.id, roll, train.iter().copied()),
            delta_cost: node_cost * added as f64,
            new_nodes,
        });
    }

    let mut seen = std::collections::BTreeSet::new();
    out.retain(|c| seen.insert((c.strategy, c.placement.rollout_nodes.clone())));
    out
}

/// A fresh group sized for `job` alone.
pub fn isolated_candidate(cfg: &ClusterConfig, job: &JobSpec, first_new_node: NodeId) -> Result<PlacementCandidate> {
    cfg.check_job(job)?;
    let r = cfg.nodes_for(job.rollout.gpus_required);
    let t = cfg.nodes_for(job.train.gpus_required);
    let mut nodes = fresh_nodes(cfg, first_new_node, Role::Rollout, r);
    nodes.extend(fresh_nodes(cfg, NodeId(first_new_node.0 + r as u64), Role::Training, t));
    let placement = Placement::new(
        job.id,
        nodes[..r].iter().map(|n| n.id),
        nodes[r..].iter().map(|n| n.id),
    );
    Ok(PlacementCandidate {
        strategy: Strategy::IsolatedProvisioning,
        target_group: Target::New,
        placement,
        delta_cost: nodes.iter().map(|n| n.hourly_cost()).sum(),
        new_nodes: nodes,
    })
}

/// Whether a group may be considered at all: below the residency limit and not saturated.
pub fn group_open(cfg: &ClusterConfig, group: &CoExecGroup) -> bool {
    group.jobs.len() < cfg.max_group_residency && !is_saturated(group)
}

/// Outcome of one scheduling pass.
#[derive(Debug, Clone)]
pub struct Choice {
    pub candidate: PlacementCandidate,
    /// Group after admission, with the final id for new groups still unset.
    pub group_after: CoExecGroup,
    pub candidates_evaluated: usize,
}

/// Picks the minimum marginal-cost feasible placement over `groups`, falling
/// back to an isolated group. Ties: lower cost, fewer nodes in the resulting
/// group, lower group id.
pub fn schedule_in<'a>(
    cfg: &ClusterConfig,
    intra: &IntraConfig,
    job: &JobSpec,
    groups: impl IntoIterator<Item = &'a CoExecGroup>,
    first_new_node: NodeId,
) -> Result<Choice> {
    job.validate()?;
    let iso = isolated_candidate(cfg, job, first_new_node)?;
    let mut evaluated = 0usize;
    let mut best: Option<(f64, usize, GroupId, PlacementCandidate, CoExecGroup)> = None;

    for g in groups {
        if !group_open(cfg, g) {
            continue;
        }
        for cand in generate_placements(cfg, g, job, first_new_node) {
            evaluated += 1;
            let mut probe = g.clone();
            for n in &cand.new_nodes {
                probe.add_node(n.clone());
            }
            if !residency_feasible(&probe, job, &cand.placement)? {
                continue;
            }
            probe.admit(job.clone(), cand.placement.clone())?;
            if !intra.slo_satisfied(&probe) {
                continue;
            }
            let delta = marginal_cost(g, &probe)?;
            let key = (delta, probe.node_count(), g.id);
            let better = match &best {
                None => true,
                Some((d, n, id, _, _)) => {
                    key.0 < d - EPS || ((key.0 - d).abs() <= EPS && (key.1, key.2) < (*n, *id))
                }
            };
            if better {
                best = Some((delta, probe.node_count(), g.id, cand, probe));
            }
        }
    }

    evaluated += 1;
    match best {
        Some((delta, _, _, cand, after)) if delta <= iso.delta_cost + EPS => Ok(Choice {
            candidate: cand,
            group_after: after,
            candidates_evaluated: evaluated,
        }),
        _ => {
            let after = iso.apply(&CoExecGroup::new(GroupId(u64::MAX)), job)?;
            Ok(Choice {
                candidate: iso,
                group_after: after,
                candidates_evaluated: evaluated,
            })
        }
    }
}

/// Algorithm-1 placement against a list of groups under the default
/// configuration.
pub fn schedule(job: &JobSpec, groups: &[CoExecGroup]) -> Result<(Target, Placement)> {
    let next = groups
        .iter()
        .flat_map(|g| g.nodes().map(|n| n.id.0 + 1))
        .max()
        .unwrap_or(0);
    let choice = schedule_in(
        &ClusterConfig::default(),
        &IntraConfig::default(),
        job,
        groups.iter(),
        NodeId(next),
    )?;
    Ok((choice.candidate.target_group, choice.candidate.placement))
}

/// Live cluster state shared by all online policies.
#[derive(Debug, Clone)]
pub struct Cluster {
    pub config: ClusterConfig,
    pub intra: IntraConfig,
    groups: BTreeMap<GroupId, CoExecGroup>,
    home: BTreeMap<JobId, GroupId>,
    next_group: u64,
    next_node: u64,
}

impl Cluster {
    pub fn new(config: ClusterConfig, intra: IntraConfig) -> Self {
        Self {
            config,
            intra,
            groups: BTreeMap::new(),
            home: BTreeMap::new(),
            next_group: 0,
            next_node: 0,
        }
    }

    pub fn groups(&self) -> &BTreeMap<GroupId, CoExecGroup> {
        &self.groups
    }

    pub fn group(&self, id: GroupId) -> Option<&CoExecGroup> {
        self.groups.get(&id)
    }

    pub fn home_of(&self, job: JobId) -> Option<GroupId> {
        self.home.get(&job).copied()
    }

    pub fn next_node_id(&self) -> NodeId {
        NodeId(self.next_node)
    }

    pub fn rollout_gpus(&self) -> u32 {
        self.groups.values().map(|g| g.rollout_gpus()).sum()
    }

    pub fn train_gpus(&self) -> u32 {
        self.groups.values().map(|g| g.train_gpus()).sum()
    }

    pub fn live_nodes(&self) -> usize {
        self.groups.values().map(|g| g.node_count()).sum()
    }

    /// $/h of everything provisioned.
    pub fn cost_rate(&self) -> f64 {
        self.groups.values().map(|g| group_cost(g).total).sum::<f64>() + 0.0
    }

    /// Installs a candidate chosen by any policy; returns the group id.
    pub fn commit(&mut self, job: &JobSpec, cand: &PlacementCandidate) -> Result<GroupId> {
        let gid = match cand.target_group {
            Target::Existing(id) => id,
            Target::New => GroupId(self.next_group),
        };
        let base = match cand.target_group {
            Target::Existing(id) => self.groups.get(&id).ok_or(Error::UnknownGroup(id))?.clone(),
            Target::New => CoExecGroup::new(gid),
        };
        let after = cand.apply(&base, job)?;
        if cand.target_group == Target::New {
            self.next_group += 1;
        }
        let top = cand.new_nodes.iter().map(|n| n.id.0 + 1).max().unwrap_or(0);
        self.next_node = self.next_node.max(top);
        self.groups.insert(gid, after);
        self.home.insert(job.id, gid);
        Ok(gid)
    }

    /// Places `job` with the marginal-cost scheduler.
    pub fn admit(&mut self, job: &JobSpec) -> Result<Decision> {
        let t0 = Instant::now();
        let choice = schedule_in(
            &self.config,
            &self.intra,
            job,
            self.groups.values(),
            self.next_node_id(),
        )?;
        let gid = self.commit(job, &choice.candidate)?;
        Ok(Decision {
            job: job.id,
            strategy: choice.candidate.strategy,
            group: gid,
            delta_cost: choice.candidate.delta_cost,
            candidates_evaluated: choice.candidates_evaluated,
            latency_us: t0.elapsed().as_micros() as u64,
        })
    }

    /// Removes a finished job, releases its memory and any rollout node left
    /// without jobs, and decommissions the group once empty. Returns the
    /// number of nodes returned.
    pub fn depart(&mut self, job: JobId) -> Result<usize> {
        let gid = self.home.remove(&job).ok_or(Error::JobNotInGroup(job))?;
        let g = self.groups.get_mut(&gid).ok_or(Error::UnknownGroup(gid))?;
        g.remove_job(job).ok_or(Error::JobNotInGroup(job))?;
        if g.is_empty() {
            let n = g.node_count();
            self.groups.remove(&gid);
            return Ok(n);
        }
        Ok(g.release_idle_rollout_nodes().len())
    }

    /// Inserts a prebuilt group; used by tests and synthetic experiments.
    pub fn insert_group(&mut self, mut group: CoExecGroup) -> GroupId {
        let gid = GroupId(self.next_group);
        self.next_group += 1;
        group.id = gid;
        let top = group.nodes().map(|n| n.id.0 + 1).max().unwrap_or(0);
        self.next_node = self.next_node.max(top);
        for &j in group.jobs.keys() {
            self.home.insert(j, gid);
        }
        self.groups.insert(gid, group);
        gid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::GroupBuilder;

    fn job(id: u64, r: f64, t: f64, slo: f64) -> JobSpec {
        JobSpec::builder(id, r, t).slo(slo).build().unwrap()
    }

    #[test]
    fn empty_cluster_isolates() {
        let mut c = Cluster::new(ClusterConfig::default(), IntraConfig::default());
        let d = c.admit(&job(0, 100.0, 50.0, 1.5)).unwrap();
        assert_eq!(d.strategy, Strategy::IsolatedProvisioning);
        assert!((d.delta_cost - 57.04).abs() < 1e-9);
        assert!((c.cost_rate() - 57.04).abs() < 1e-9);
        assert_eq!(d.candidates_evaluated, 1);
    }

    #[test]
    fn complementary_job_packs_for_free() {
        let mut c = Cluster::new(ClusterConfig::default(), IntraConfig::default());
        c.admit(&job(0, 100.0, 50.0, 1.1)).unwrap();
        let d = c.admit(&job(1, 50.0, 100.0, 1.1)).unwrap();
        assert_eq!(d.strategy, Strategy::DirectPacking);
        assert_eq!(d.delta_cost, 0.0);
        assert_eq!(c.groups().len(), 1);
        assert!((c.cost_rate() - 57.04).abs() < 1e-9);
    }

    #[test]
    fn bubble_candidate_has_zero_delta() {
        let cfg = ClusterConfig::default();
        let g = GroupBuilder::new(&cfg, GroupId(0), 1, 1)
            .job(job(0, 100.0, 50.0, 1.5), &[0])
            .unwrap()
            .build();
        let cands = generate_placements(&cfg, &g, &job(1, 40.0, 90.0, 1.5), NodeId(99));
        let dp: Vec<_> = cands.iter().filter(|c| c.strategy == Strategy::DirectPacking).collect();
        assert_eq!(dp.len(), 1);
        assert_eq!(dp[0].delta_cost, 0.0);
    }

    #[test]
    fn rollout_heavy_group_scales_by_one_node() {
        let cfg = ClusterConfig::default();
        let g = GroupBuilder::new(&cfg, GroupId(0), 1, 1)
            .job(job(0, 300.0, 50.0, 1.2), &[0])
            .unwrap()
            .build();
        let j = job(1, 280.0, 40.0, 1.2);
        let cands = generate_placements(&cfg, &g, &j, NodeId(99));
        let rs: Vec<_> = cands.iter().filter(|c| c.strategy == Strategy::RolloutScaling).collect();
        assert_eq!(rs.len(), 1);
        assert!((rs[0].delta_cost - 14.80).abs() < 1e-9);
        assert_eq!(rs[0].new_nodes.len(), 1);

        let mut c = Cluster::new(cfg, IntraConfig::default());
        c.insert_group(g);
        let d = c.admit(&j).unwrap();
        assert_eq!(d.strategy, Strategy::RolloutScaling);
        assert!((c.cost_rate() - 57.04 - 14.80).abs() < 1e-9);
    }

    #[test]
    fn load_full_nodes_only_scale() {
        let cfg = ClusterConfig::default();
        // rollout node load 150 equals the cycle of 150
        let g = GroupBuilder::new(&cfg, GroupId(0), 1, 1)
            .job(job(0, 100.0, 50.0, 2.0), &[0])
            .unwrap()
            .job(job(1, 50.0, 10.0, 2.0), &[0])
            .unwrap()
            .build();
        let cands = generate_placements(&cfg, &g, &job(2, 10.0, 10.0, 2.0), NodeId(99));
        assert!(!cands.is_empty());
        assert!(cands.iter().all(|c| c.strategy == Strategy::RolloutScaling));
    }

    #[test]
    fn memory_tight_node_falls_through() {
        let cfg = ClusterConfig::default();
        // 14B footprints: 2 x 445.4 fits, a 3rd does not
        let big = |id, r, t| {
            JobSpec::builder(id, r, t)
                .mem(445.4, 100.0)
                .slo(2.0)
                .build()
                .unwrap()
        };
        let g = GroupBuilder::new(&cfg, GroupId(0), 1, 1)
            .job(big(0, 300.0, 300.0), &[0])
            .unwrap()
            .job(big(1, 50.0, 50.0), &[0])
            .unwrap()
            .build();
        let mut c = Cluster::new(cfg, IntraConfig::default());
        c.insert_group(g);
        let d = c.admit(&big(2, 50.0, 50.0)).unwrap();
        assert_ne!(d.strategy, Strategy::DirectPacking);
        let g = c.group(d.group).unwrap();
        for n in g.nodes() {
            assert!(n.host_mem_used <= n.host_mem_capacity);
        }
    }

    #[test]
    fn worst_case_durations_gate_admission() {
        // two equal rollout-heavy jobs contend 1.43x, above an SLO of 1.2
        let mut c = Cluster::new(ClusterConfig::default(), IntraConfig::default());
        c.admit(&job(0, 100.0, 40.0, 1.2)).unwrap();
        let d = c.admit(&job(1, 100.0, 40.0, 1.2)).unwrap();
        assert_ne!(d.strategy, Strategy::DirectPacking);
        for g in c.groups().values() {
            assert!(c.intra.slo_satisfied(g));
        }
    }

    #[test]
    fn saturated_group_is_skipped() {
        let cfg = ClusterConfig::default();
        let g = GroupBuilder::new(&cfg, GroupId(0), 1, 1)
            .job(job(0, 100.0, 50.0, 5.0), &[0])
            .unwrap()
            .job(job(1, 60.0, 40.0, 5.0), &[0])
            .unwrap()
            .build();
        assert!(!group_open(&cfg, &g));
        let mut c = Cluster::new(cfg, IntraConfig::default());
        c.insert_group(g);
        let d = c.admit(&job(2, 10.0, 10.0, 5.0)).unwrap();
        assert_eq!(d.strategy, Strategy::IsolatedProvisioning);
        assert_eq!(c.group(GroupId(0)).unwrap().jobs.len(), 2);
    }

    #[test]
    fn departures_release_nodes() {
        let mut c = Cluster::new(ClusterConfig::default(), IntraConfig::default());
        c.admit(&job(0, 300.0, 50.0, 1.2)).unwrap();
        c.admit(&job(1, 280.0, 40.0, 1.2)).unwrap();
        assert_eq!(c.live_nodes(), 3);
        assert_eq!(c.depart(JobId(1)).unwrap(), 1);
        assert_eq!(c.live_nodes(), 2);
        assert_eq!(c.depart(JobId(0)).unwrap(), 2);
        assert_eq!(c.live_nodes(), 0);
        assert!(c.groups().is_empty());
        assert!(c.depart(JobId(0)).is_err());
    }

    #[test]
    fn oversized_job_is_rejected() {
        let mut c = Cluster::new(ClusterConfig::default(), IntraConfig::default());
        let j = JobSpec::builder(0, 10.0, 10.0).mem(2000.0, 10.0).build().unwrap();
        assert!(matches!(c.admit(&j), Err(Error::Admission { .. })));
    }

    #[test]
    fn free_function_matches_cluster() {
        let cfg = ClusterConfig::default();
        let g = GroupBuilder::new(&cfg, GroupId(0), 1, 1)
            .job(job(0, 100.0, 50.0, 1.1), &[0])
            .unwrap()
            .build();
        let (t, p) = schedule(&job(1, 50.0, 100.0, 1.1), &[g]).unwrap();
        assert_eq!(t, Target::Existing(GroupId(0)));
        assert_eq!(p.rollout_nodes.len(), 1);
        let (t, _) = schedule(&job(2, 50.0, 100.0, 1.1), &[]).unwrap();
        assert_eq!(t, Target::New);
    }

    #[test]
    fn combinations_in_order() {
        let mut seen = Vec::new();
        for_each_combination(4, 2, |c| {
            seen.push(c.to_vec());
            true
        });
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[0], vec![0, 1]);
        assert_eq!(seen[5], vec![2, 3]);
    }
}
