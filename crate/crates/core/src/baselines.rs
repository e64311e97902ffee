//! Comparison policies and the exhaustive offline optimum.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ClusterConfig, CoExecGroup, GroupId, JobId, JobSpec, NodeId, Placement, Role, EPS};
use crate::error::{Error, Result};
use crate::inter::{isolated_candidate, PlacementCandidate, Strategy, Target};
use crate::intra::{group_load, IntraConfig};
use crate::simkit::{replay, ReplayConfig, SimReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    RollMux,
    Random,
    GreedyMostIdle,
    SoloDisagg,
    Colocated,
    OfflineOptimal,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::RollMux,
        PolicyKind::Random,
        PolicyKind::GreedyMostIdle,
        PolicyKind::SoloDisagg,
        PolicyKind::Colocated,
        PolicyKind::OfflineOptimal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::RollMux => "rollmux",
            PolicyKind::Random => "random",
            PolicyKind::GreedyMostIdle => "greedy",
            PolicyKind::SoloDisagg => "solo",
            PolicyKind::Colocated => "colocated",
            PolicyKind::OfflineOptimal => "optimal",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        let kind = match key.as_str() {
            "rollmux" => PolicyKind::RollMux,
            "random" => PolicyKind::Random,
            "greedy" | "greedymostidle" => PolicyKind::GreedyMostIdle,
            "solo" | "solod" | "solodisagg" => PolicyKind::SoloDisagg,
            "colocated" | "verl" => PolicyKind::Colocated,
            "optimal" | "offlineoptimal" => PolicyKind::OfflineOptimal,
            _ => {
                return Err(Error::UnknownPolicy {
                    name: s.to_string(),
                    valid: PolicyKind::ALL.map(|p| p.name()).join(", "),
                })
            }
        };
        Ok(kind)
    }
}

/// Rollout nodes of `group` that can hold `job`, or `None` when the group
/// cannot take the job at all (residency limit, training memory, too few
/// rollout nodes with memory left).
pub fn accommodating_nodes(cfg: &ClusterConfig, group: &CoExecGroup, job: &JobSpec) -> Option<Vec<NodeId>> {
    if group.jobs.len() >= cfg.max_group_residency {
        return None;
    }
    let fits = |avail: f64, need: f64| need <= avail + EPS;
    if !group
        .train_pool
        .values()
        .all(|n| fits(n.mem_available(), job.train.mem_footprint))
    {
        return None;
    }
    let nodes: Vec<NodeId> = group
        .rollout_pool
        .values()
        .filter(|n| fits(n.mem_available(), job.rollout.mem_footprint))
        .map(|n| n.id)
        .collect();
    (nodes.len() >= cfg.nodes_for(job.rollout.gpus_required)).then_some(nodes)
}

fn packing(group: &CoExecGroup, job: &JobSpec, rollout: Vec<NodeId>) -> PlacementCandidate {
    PlacementCandidate {
        strategy: Strategy::DirectPacking,
        target_group: Target::Existing(group.id),
        placement: Placement::new(job.id, rollout, group.train_pool.keys().copied()),
        delta_cost: 0.0,
        new_nodes: Vec::new(),
    }
}

/// Uniform choice among the groups that can physically hold the job plus a
/// new group, then uniformly random rollout nodes. No SLO check.
pub fn random_place<'a, R: Rng + ?Sized>(
    cfg: &ClusterConfig,
    job: &JobSpec,
    groups: impl IntoIterator<Item = &'a CoExecGroup>,
    first_new_node: NodeId,
    rng: &mut R,
) -> Result<PlacementCandidate> {
    let options: Vec<(&CoExecGroup, Vec<NodeId>)> = groups
        .into_iter()
        .filter_map(|g| accommodating_nodes(cfg, g, job).map(|n| (g, n)))
        .collect();
    let pick = rng.random_range(0..=options.len());
    match options.get(pick) {
        Some((g, nodes)) => {
            let k = cfg.nodes_for(job.rollout.gpus_required);
            let chosen: Vec<NodeId> = nodes.choose_multiple(rng, k).copied().collect();
            Ok(packing(g, job, chosen))
        }
        None => isolated_candidate(cfg, job, first_new_node),
    }
}

/// The group with the highest idle share `1 - load/cycle`, lowest id on
/// ties, on its least-loaded rollout nodes. No SLO check.
pub fn greedy_place<'a>(
    cfg: &ClusterConfig,
    job: &JobSpec,
    groups: impl IntoIterator<Item = &'a CoExecGroup>,
    first_new_node: NodeId,
) -> Result<PlacementCandidate> {
    let mut best: Option<(f64, &CoExecGroup, Vec<NodeId>)> = None;
    for g in groups {
        let idle = group_load(g).idle_fraction();
        if idle <= EPS {
            continue;
        }
        let Some(nodes) = accommodating_nodes(cfg, g, job) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| idle > b.0 + EPS || ((idle - b.0).abs() <= EPS && g.id < b.1.id)) {
            best = Some((idle, g, nodes));
        }
    }
    match best {
        Some((_, g, nodes)) => {
            let loads = g.rollout_node_loads();
            let mut nodes = nodes;
            nodes.sort_by(|a, b| loads[a].total_cmp(&loads[b]).then(a.cmp(b)));
            nodes.truncate(cfg.nodes_for(job.rollout.gpus_required));
            Ok(packing(g, job, nodes))
        }
        None => isolated_candidate(cfg, job, first_new_node),
    }
}

/// Every job alone on dedicated pools for its whole duration.
pub fn solo_cost(jobs: &[JobSpec], cfg: &ReplayConfig) -> Result<SimReport> {
    replay(jobs, PolicyKind::SoloDisagg, cfg, 0)
}

/// Every job runs both phases on its own training GPUs.
pub fn colocated_cost(jobs: &[JobSpec], cfg: &ReplayConfig) -> Result<SimReport> {
    replay(jobs, PolicyKind::Colocated, cfg, 0)
}

/// $/h of running `job` co-located on training GPUs.
pub fn colocated_rate(cfg: &ClusterConfig, job: &JobSpec) -> f64 {
    f64::from(job.train.gpus_required) * cfg.kind(Role::Training).hourly_cost
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalConfig {
    /// Largest job set solved exactly on request.
    pub exact_cap: usize,
    /// Live-set size up to which windowed replays solve exactly; larger
    /// sets use the per-job lower bound.
    pub window: usize,
}

impl Default for OptimalConfig {
    fn default() -> Self {
        Self {
            exact_cap: 13,
            window: 10,
        }
    }
}

/// Optimum of one live job set; GPU counts are only known when solved exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowResult {
    pub cost: f64,
    pub exact: bool,
    pub rollout_gpus: Option<u32>,
    pub train_gpus: Option<u32>,
}

/// Minimum-cost partition of a job set.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalSolution {
    pub total_cost: f64,
    /// Blocks of job ids, in ascending order of their smallest member.
    pub partition: Vec<Vec<JobId>>,
    pub groups: Vec<CoExecGroup>,
}

#[derive(Debug, Clone)]
struct Block {
    cost: f64,
    group: CoExecGroup,
}

/// Cheapest configuration of job blocks, memoized by member ids.
#[derive(Debug, Clone)]
pub struct BlockSolver {
    cfg: ClusterConfig,
    intra: IntraConfig,
    cache: HashMap<Vec<JobId>, Option<Block>>,
}

impl BlockSolver {
    pub fn new(cfg: ClusterConfig, intra: IntraConfig) -> Self {
        Self {
            cfg,
            intra,
            cache: HashMap::new(),
        }
    }

    /// $/h of the cheapest SLO-feasible group holding exactly `jobs`.
    pub fn block_cost(&mut self, jobs: &[&JobSpec]) -> Option<f64> {
        self.block(jobs).map(|b| b.cost)
    }

    fn block(&mut self, jobs: &[&JobSpec]) -> Option<Block> {
        let mut key: Vec<JobId> = jobs.iter().map(|j| j.id).collect();
        key.sort();
        if let Some(hit) = self.cache.get(&key) {
            return hit.clone();
        }
        let out = solve_block(&self.cfg, &self.intra, jobs);
        self.cache.insert(key, out.clone());
        out
    }

    /// Exact minimum over all set partitions of `jobs`.
    pub fn exact(&mut self, jobs: &[JobSpec], cap: usize) -> Result<OptimalSolution> {
        let n = jobs.len();
        if n > cap {
            return Err(Error::InstanceTooLarge { jobs: n, cap });
        }
        let mut order: Vec<&JobSpec> = jobs.iter().collect();
        order.sort_by_key(|j| j.id);
        let full = (1usize << n) - 1;
        let max_block = self.cfg.max_group_residency;
        let mut block_cost: Vec<Option<f64>> = vec![None; full + 1];
        for (mask, slot) in block_cost.iter_mut().enumerate().skip(1) {
            if (mask.count_ones() as usize) <= max_block {
                let members: Vec<&JobSpec> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| order[i]).collect();
                *slot = self.block_cost(&members);
            }
        }
        // best[s]: minimum cost of covering s, choosing the block holding the lowest member first
        let mut best = vec![f64::INFINITY; full + 1];
        let mut pick = vec![0usize; full + 1];
        best[0] = 0.0;
        for s in 1..=full {
            let low = s & s.wrapping_neg();
            let rest = s ^ low;
            let mut sub = rest;
            loop {
                let b = sub | low;
                if let Some(c) = block_cost[b] {
                    let total = c + best[s ^ b];
                    if total < best[s] - EPS {
                        best[s] = total;
                        pick[s] = b;
                    }
                }
                if sub == 0 {
                    break;
                }
                sub = (sub - 1) & rest;
            }
        }
        if !best[full].is_finite() {
            let job = order.first().map(|j| j.id).unwrap_or(JobId(0));
            return Err(Error::Admission {
                job,
                reason: "no feasible grouping".into(),
            });
        }
        let mut partition = Vec::new();
        let mut groups = Vec::new();
        let mut s = full;
        while s != 0 {
            let b = pick[s];
            let members: Vec<&JobSpec> = (0..n).filter(|i| b >> i & 1 == 1).map(|i| order[i]).collect();
            partition.push(members.iter().map(|j| j.id).collect());
            let mut g = self.block(&members).expect("feasible block").group;
            g.id = GroupId(groups.len() as u64);
            groups.push(g);
            s ^= b;
        }
        Ok(OptimalSolution {
            total_cost: best[full],
            partition,
            groups,
        })
    }

    /// `sum_j min over feasible blocks B containing j of cost(B) / |B|`,
    /// never above the exact optimum.
    pub fn lower_bound(&mut self, jobs: &[JobSpec]) -> f64 {
        let mut order: Vec<&JobSpec> = jobs.iter().collect();
        order.sort_by_key(|j| j.id);
        let mut share = vec![f64::INFINITY; order.len()];
        let mut stack: Vec<usize> = Vec::new();
        self.extend_blocks(&order, 0, &mut stack, &mut share);
        share.iter().sum()
    }

    fn extend_blocks(&mut self, order: &[&JobSpec], from: usize, stack: &mut Vec<usize>, share: &mut [f64]) {
        for i in from..order.len() {
            stack.push(i);
            let members: Vec<&JobSpec> = stack.iter().map(|&k| order[k]).collect();
            if necessary_conditions(&self.cfg, &members) {
                if let Some(c) = self.block_cost(&members) {
                    let per = c / members.len() as f64;
                    for &k in stack.iter() {
                        share[k] = share[k].min(per);
                    }
                }
                if stack.len() < self.cfg.max_group_residency {
                    self.extend_blocks(order, i + 1, stack, share);
                }
            }
            stack.pop();
        }
    }

    /// Exact optimum when `jobs.len() <= window`, otherwise the lower bound.
    pub fn windowed(&mut self, jobs: &[JobSpec], window: usize) -> f64 {
        self.windowed_detail(jobs, window).cost
    }

    pub fn windowed_detail(&mut self, jobs: &[JobSpec], window: usize) -> WindowResult {
        if jobs.is_empty() {
            return WindowResult {
                cost: 0.0,
                exact: true,
                rollout_gpus: Some(0),
                train_gpus: Some(0),
            };
        }
        if jobs.len() <= window {
            if let Ok(s) = self.exact(jobs, window) {
                return WindowResult {
                    cost: s.total_cost,
                    exact: true,
                    rollout_gpus: Some(s.groups.iter().map(|g| g.rollout_gpus()).sum()),
                    train_gpus: Some(s.groups.iter().map(|g| g.train_gpus()).sum()),
                };
            }
        }
        WindowResult {
            cost: self.lower_bound(jobs),
            exact: false,
            rollout_gpus: None,
            train_gpus: None,
        }
    }
}

/// Monotone conditions every feasible block satisfies; supersets of a
/// failing block fail too.
fn necessary_conditions(cfg: &ClusterConfig, jobs: &[&JobSpec]) -> bool {
    if jobs.len() > cfg.max_group_residency {
        return false;
    }
    let train_mem: f64 = jobs.iter().map(|j| j.train.mem_footprint).sum();
    if train_mem > cfg.host_mem_gb + EPS {
        return false;
    }
    let bound = jobs.iter().map(|j| j.slo * j.solo_time()).fold(f64::INFINITY, f64::min);
    let train: f64 = jobs.iter().map(|j| j.train.worst_case_duration).sum();
    train <= bound * (1.0 + EPS)
}

/// Cheapest group for exactly `jobs`: the fewest rollout nodes that admit an
/// SLO-feasible pinning, and the smallest training pool any member needs.
fn solve_block(cfg: &ClusterConfig, intra: &IntraConfig, jobs: &[&JobSpec]) -> Option<Block> {
    if jobs.is_empty() || !necessary_conditions(cfg, jobs) {
        return None;
    }
    if jobs.iter().any(|j| cfg.check_job(j).is_err()) {
        return None;
    }
    let bound = jobs.iter().map(|j| j.slo * j.solo_time()).fold(f64::INFINITY, f64::min);
    let k: Vec<usize> = jobs.iter().map(|j| cfg.nodes_for(j.rollout.gpus_required)).collect();
    let t = jobs.iter().map(|j| cfg.nodes_for(j.train.gpus_required)).min()?;
    let work: f64 = jobs.iter().zip(&k).map(|(j, &k)| j.rollout.worst_case_duration * k as f64).sum();
    let mem: f64 = jobs.iter().zip(&k).map(|(j, &k)| j.rollout.mem_footprint * k as f64).sum();
    let total: usize = k.iter().sum();
    let lo = *k.iter().max()?;
    let lo = lo
        .max((work / bound - EPS).ceil() as usize)
        .max((mem / cfg.host_mem_gb - EPS).ceil() as usize);

    // longest rollouts first prunes earlier
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by(|&a, &b| {
        jobs[b]
            .rollout
            .worst_case_duration
            .total_cmp(&jobs[a].rollout.worst_case_duration)
            .then(jobs[a].id.cmp(&jobs[b].id))
    });

    for m in lo..=total {
        let mut search = AssignSearch {
            cfg,
            intra,
            jobs,
            k: &k,
            order: &order,
            m,
            t,
            bound,
            load: vec![0.0; m],
            mem: vec![0.0; m],
            assign: vec![Vec::new(); jobs.len()],
            found: None,
        };
        search.dfs(0, 0);
        if let Some(group) = search.found {
            let cost = m as f64 * cfg.node_hourly_cost(Role::Rollout) + t as f64 * cfg.node_hourly_cost(Role::Training);
            return Some(Block { cost, group });
        }
    }
    None
}

struct AssignSearch<'a> {
    cfg: &'a ClusterConfig,
    intra: &'a IntraConfig,
    jobs: &'a [&'a JobSpec],
    k: &'a [usize],
    order: &'a [usize],
    m: usize,
    t: usize,
    bound: f64,
    load: Vec<f64>,
    mem: Vec<f64>,
    assign: Vec<Vec<usize>>,
    found: Option<CoExecGroup>,
}

impl AssignSearch<'_> {
    /// Assigns jobs in `order` to node subsets; nodes beyond `used` are
    /// interchangeable, so only their prefix is ever opened.
    fn dfs(&mut self, pos: usize, used: usize) {
        if self.found.is_some() {
            return;
        }
        if pos == self.order.len() {
            if used == self.m {
                self.finish();
            }
            return;
        }
        let remaining: usize = self.order[pos..].iter().map(|&j| self.k[j]).sum();
        if used + remaining < self.m {
            return;
        }
        let j = self.order[pos];
        let need = self.k[j];
        let limit = (used + need).min(self.m);
        let job = self.jobs[j];
        let mut subset: Vec<usize> = Vec::with_capacity(need);
        self.choose(pos, used, limit, 0, need, job, &mut subset);
    }

    #[allow(clippy::too_many_arguments)]
    fn choose(
        &mut self,
        pos: usize,
        used: usize,
        limit: usize,
        from: usize,
        need: usize,
        job: &JobSpec,
        subset: &mut Vec<usize>,
    ) {
        if self.found.is_some() {
            return;
        }
        if subset.len() == need {
            // fresh nodes must be opened in order
            let fresh: Vec<usize> = subset.iter().copied().filter(|&n| n >= used).collect();
            if fresh.iter().enumerate().any(|(i, &n)| n != used + i) {
                return;
            }
            let j = self.order[pos];
            for &n in subset.iter() {
                self.load[n] += job.rollout.worst_case_duration;
                self.mem[n] += job.rollout.mem_footprint;
            }
            self.assign[j] = subset.clone();
            self.dfs(pos + 1, used + fresh.len());
            for &n in subset.iter() {
                self.load[n] -= job.rollout.worst_case_duration;
                self.mem[n] -= job.rollout.mem_footprint;
            }
            return;
        }
        for n in from..limit {
            if self.load[n] + job.rollout.worst_case_duration > self.bound * (1.0 + EPS)
                || self.mem[n] + job.rollout.mem_footprint > self.cfg.host_mem_gb + EPS
            {
                continue;
            }
            subset.push(n);
            self.choose(pos, used, limit, n + 1, need, job, subset);
            subset.pop();
        }
    }

    fn finish(&mut self) {
        let mut g = CoExecGroup::new(GroupId(0));
        for n in 0..self.m {
            g.add_node(self.cfg.new_node(NodeId(n as u64), Role::Rollout));
        }
        for n in 0..self.t {
            g.add_node(self.cfg.new_node(NodeId(500_000 + n as u64), Role::Training));
        }
        for (j, nodes) in self.assign.iter().enumerate() {
            let job = self.jobs[j];
            let p = Placement::new(
                job.id,
                nodes.iter().map(|&n| NodeId(n as u64)),
                (0..self.t).map(|n| NodeId(500_000 + n as u64)),
            );
            if g.admit(job.clone(), p).is_err() {
                return;
            }
        }
        if self.intra.slo_satisfied(&g) {
            self.found = Some(g);
        }
    }
}

/// Exact offline optimum over `jobs` with the default exact-search cap.
pub fn offline_optimal(jobs: &[JobSpec], cfg: &ClusterConfig, intra: &IntraConfig) -> Result<OptimalSolution> {
    BlockSolver::new(cfg.clone(), *intra).exact(jobs, OptimalConfig::default().exact_cap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::group_cost;
    use crate::domain::GroupBuilder;
    use crate::inter::Cluster;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn job(id: u64, r: f64, t: f64, slo: f64) -> JobSpec {
        JobSpec::builder(id, r, t).slo(slo).build().unwrap()
    }

    fn solver() -> BlockSolver {
        BlockSolver::new(ClusterConfig::default(), IntraConfig::default())
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyKind::ALL {
            assert_eq!(p.name().parse::<PolicyKind>().unwrap(), p);
        }
        let err = "fifo".parse::<PolicyKind>().unwrap_err().to_string();
        assert!(err.contains("rollmux") && err.contains("optimal"));
    }

    #[test]
    fn random_on_empty_cluster_isolates() {
        let cfg = ClusterConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_place(&cfg, &job(0, 10.0, 10.0, 1.0), [], NodeId(0), &mut rng).unwrap();
        assert_eq!(c.target_group, Target::New);
    }

    #[test]
    fn random_is_reproducible() {
        let cfg = ClusterConfig::default();
        let groups: Vec<CoExecGroup> = (0..6)
            .map(|g| {
                GroupBuilder::new(&cfg, GroupId(g), 3, 1)
                    .job(job(g, 100.0, 50.0, 1.0), &[0])
                    .unwrap()
                    .build()
            })
            .collect();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_place(&cfg, &job(99, 10.0, 10.0, 1.0), &groups, NodeId(1 << 40), &mut rng).unwrap()
        };
        assert_eq!(draw(7), draw(7));
        let distinct: std::collections::BTreeSet<_> = (0..40).map(|s| draw(s).target_group).collect();
        assert!(distinct.len() > 3);
    }

    #[test]
    fn random_skips_groups_without_memory() {
        let cfg = ClusterConfig::default();
        let fat = JobSpec::builder(0, 100.0, 50.0).mem(1000.0, 100.0).build().unwrap();
        let g = GroupBuilder::new(&cfg, GroupId(0), 1, 1).job(fat, &[0]).unwrap().build();
        assert!(accommodating_nodes(&cfg, &g, &job(1, 10.0, 10.0, 1.0)).is_none());
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_place(&cfg, &job(1, 10.0, 10.0, 1.0), [&g], NodeId(10), &mut rng).unwrap();
            assert_eq!(c.target_group, Target::New);
        }
    }

    #[test]
    fn greedy_prefers_most_idle() {
        let cfg = ClusterConfig::default();
        // idle shares 30% and 10%
        let g30 = GroupBuilder::new(&cfg, GroupId(0), 1, 1)
            .job(job(0, 70.0, 30.0, 1.0), &[0])
            .unwrap()
            .build();
        let g10 = GroupBuilder::new(&cfg, GroupId(1), 1, 1)
            .job(job(1, 90.0, 10.0, 1.0), &[0])
            .unwrap()
            .build();
        assert!((group_load(&g30).idle_fraction() - 0.3).abs() < 1e-9);
        let c = greedy_place(&cfg, &job(2, 10.0, 10.0, 1.0), [&g10, &g30], NodeId(99)).unwrap();
        assert_eq!(c.target_group, Target::Existing(GroupId(0)));
    }

    #[test]
    fn greedy_ties_go_to_lowest_id() {
        let cfg = ClusterConfig::default();
        let mk = |g| {
            GroupBuilder::new(&cfg, GroupId(g), 1, 1)
                .job(job(g, 70.0, 30.0, 1.0), &[0])
                .unwrap()
                .build()
        };
        let (a, b) = (mk(4), mk(2));
        let c = greedy_place(&cfg, &job(9, 10.0, 10.0, 1.0), [&a, &b], NodeId(99)).unwrap();
        assert_eq!(c.target_group, Target::Existing(GroupId(2)));
    }

    #[test]
    fn greedy_full_groups_fall_back() {
        let cfg = ClusterConfig::default();
        let g = GroupBuilder::new(&cfg, GroupId(0), 1, 1)
            .job(job(0, 100.0, 50.0, 1.0), &[0])
            .unwrap()
            .job(job(1, 60.0, 40.0, 1.0), &[0])
            .unwrap()
            .build();
        let c = greedy_place(&cfg, &job(2, 10.0, 10.0, 1.0), [&g], NodeId(99)).unwrap();
        assert_eq!(c.target_group, Target::New);
    }

    #[test]
    fn colocated_rate_is_training_gpus_only() {
        let cfg = ClusterConfig::default();
        assert!((colocated_rate(&cfg, &job(0, 1.0, 1.0, 1.0)) * 10.0 - 422.40).abs() < 1e-9);
    }

    #[test]
    fn optimum_merges_complementary_pair() {
        let s = offline_optimal(
            &[job(0, 100.0, 50.0, 1.1), job(1, 50.0, 100.0, 1.1)],
            &ClusterConfig::default(),
            &IntraConfig::default(),
        )
        .unwrap();
        assert_eq!(s.partition.len(), 1);
        assert!((s.total_cost - 57.04).abs() < 1e-9);
    }

    #[test]
    fn optimum_isolates_contending_pair() {
        // sharing a rollout node doubles the period, and a shared training
        // pool stretches it to 220 s, above 1.02 x 210 s
        let jobs = [job(0, 100.0, 110.0, 1.02), job(1, 100.0, 110.0, 1.02)];
        let s = offline_optimal(&jobs, &ClusterConfig::default(), &IntraConfig::default()).unwrap();
        assert_eq!(s.partition.len(), 2);
        assert!((s.total_cost - 2.0 * 57.04).abs() < 1e-9);
    }

    #[test]
    fn optimum_of_one_job_is_solo() {
        let s = offline_optimal(&[job(0, 10.0, 20.0, 1.0)], &ClusterConfig::default(), &IntraConfig::default())
            .unwrap();
        assert!((s.total_cost - 57.04).abs() < 1e-9);
        assert_eq!(group_cost(&s.groups[0]).total, s.total_cost);
    }

    #[test]
    fn rollout_heavy_pair_shares_training() {
        let jobs = [job(0, 300.0, 50.0, 1.2), job(1, 280.0, 40.0, 1.2)];
        let s = offline_optimal(&jobs, &ClusterConfig::default(), &IntraConfig::default()).unwrap();
        assert!((s.total_cost - 71.84).abs() < 1e-9);
    }

    #[test]
    fn too_many_jobs_is_an_error() {
        let jobs: Vec<JobSpec> = (0..14).map(|i| job(i, 10.0, 10.0, 1.0)).collect();
        let err = offline_optimal(&jobs, &ClusterConfig::default(), &IntraConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InstanceTooLarge { jobs: 14, cap: 13 }));
        assert!(err.to_string().contains("sampling"));
    }

    #[test]
    fn lower_bound_never_exceeds_exact() {
        let jobs = [
            job(0, 100.0, 50.0, 1.5),
            job(1, 40.0, 90.0, 1.3),
            job(2, 300.0, 60.0, 1.2),
            job(3, 60.0, 250.0, 1.9),
            job(4, 30.0, 30.0, 1.1),
        ];
        let mut s = solver();
        let exact = s.exact(&jobs, 13).unwrap().total_cost;
        let lb = s.lower_bound(&jobs);
        assert!(lb <= exact + 1e-9, "{lb} > {exact}");
        assert!(lb > 0.0);
        assert_eq!(s.windowed(&jobs, 10), exact);
        assert_eq!(s.windowed(&jobs, 3), lb);
    }

    #[test]
    fn optimum_not_above_online_scheduler() {
        let jobs = [
            job(0, 100.0, 50.0, 1.5),
            job(1, 40.0, 90.0, 1.3),
            job(2, 300.0, 60.0, 1.2),
            job(3, 60.0, 250.0, 1.9),
        ];
        let mut c = Cluster::new(ClusterConfig::default(), IntraConfig::default());
        for j in &jobs {
            c.admit(j).unwrap();
        }
        let opt = offline_optimal(&jobs, &ClusterConfig::default(), &IntraConfig::default()).unwrap();
        assert!(opt.total_cost <= c.cost_rate() + 1e-9);
        for g in &opt.groups {
            assert!(IntraConfig::default().slo_satisfied(g));
        }
    }
}
