//! Core data model: GPU kinds, nodes, jobs, placements and co-execution groups.
//!
//! A co-execution group owns one rollout pool and one training pool. Every job
//! admitted to the group is pinned to a subset of the rollout pool and to the
//! whole training pool, and its phase state stays cached in host memory of
//! the nodes it is pinned to. That cache is what bounds group residency.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack for floating point comparisons on memory and time quantities.
pub const EPS: f64 = 1e-9;

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(JobId, "j");
id_type!(NodeId, "n");
id_type!(GroupId, "g");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Rollout,
    Training,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Rollout => f.write_str("rollout"),
            Role::Training => f.write_str("training"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuKind {
    pub name: String,
    /// Price of one GPU in $/h.
    pub hourly_cost: f64,
    pub role: Role,
}

impl GpuKind {
    pub fn new(name: impl Into<String>, hourly_cost: f64, role: Role) -> Result<Self> {
        let name = name.into();
        if !(hourly_cost > 0.0 && hourly_cost.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gpu kind {name} has non-positive hourly cost {hourly_cost}"
            )));
        }
        Ok(Self {
            name,
            hourly_cost,
            role,
        })
    }

    pub fn h20() -> Self {
        Self {
            name: "H20".into(),
            hourly_cost: 1.85,
            role: Role::Rollout,
        }
    }

    pub fn h800() -> Self {
        Self {
            name: "H800".into(),
            hourly_cost: 5.28,
            role: Role::Training,
        }
    }
}

/// Cluster-wide hardware configuration.
///
/// JSON layout: `{"gpu_kinds": [...], "gpus_per_node": 8, "host_mem_gb": 1024, "max_group_residency": 5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub gpu_kinds: Vec<GpuKind>,
    pub gpus_per_node: u32,
    pub host_mem_gb: f64,
    pub max_group_residency: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            gpu_kinds: vec![GpuKind::h20(), GpuKind::h800()],
            gpus_per_node: 8,
            host_mem_gb: 1024.0,
            max_group_residency: 5,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        for role in [Role::Rollout, Role::Training] {
            let n = self.gpu_kinds.iter().filter(|k| k.role == role).count();
            if n != 1 {
                return Err(Error::InvalidConfig(format!(
                    "expected exactly one {role} gpu kind, found {n}"
                )));
            }
        }
        for k in &self.gpu_kinds {
            GpuKind::new(k.name.clone(), k.hourly_cost, k.role)?;
        }
        if self.gpus_per_node == 0 {
            return Err(Error::InvalidConfig("gpus_per_node must be positive".into()));
        }
        if !(self.host_mem_gb > 0.0) {
            return Err(Error::InvalidConfig("host_mem_gb must be positive".into()));
        }
        if self.max_group_residency == 0 {
            return Err(Error::InvalidConfig(
                "max_group_residency must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn kind(&self, role: Role) -> &GpuKind {
        self.gpu_kinds
            .iter()
            .find(|k| k.role == role)
            .expect("validated config has one kind per role")
    }

    /// Hourly price of one whole node of the given role.
    pub fn node_hourly_cost(&self, role: Role) -> f64 {
        self.kind(role).hourly_cost * f64::from(self.gpus_per_node)
    }

    /// Whole nodes needed to host `gpus` GPUs.
    pub fn nodes_for(&self, gpus: u32) -> usize {
        gpus.div_ceil(self.gpus_per_node).max(1) as usize
    }

    pub fn new_node(&self, id: NodeId, role: Role) -> Node {
        Node {
            id,
            kind: self.kind(role).clone(),
            gpus: self.gpus_per_node,
            host_mem_capacity: self.host_mem_gb,
            host_mem_used: 0.0,
        }
    }

    /// Checks that a job can be expressed on this cluster at all.
    pub fn check_job(&self, job: &JobSpec) -> Result<()> {
        let gpn = self.gpus_per_node;
        for (name, phase) in [("rollout", &job.rollout), ("train", &job.train)] {
            let g = phase.gpus_required;
            if !(g.is_multiple_of(gpn) || gpn.is_multiple_of(g)) {
                return Err(Error::InvalidJob {
                    job: job.id,
                    reason: format!(
                        "{name} gpus {g} is neither a multiple nor a divisor of {gpn} gpus per node"
                    ),
                });
            }
            if phase.mem_footprint > self.host_mem_gb + EPS {
                return Err(Error::Admission {
                    job: job.id,
                    reason: format!(
                        "{name} footprint {:.1} GB exceeds node host memory {:.1} GB",
                        phase.mem_footprint, self.host_mem_gb
                    ),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: GpuKind,
    pub gpus: u32,
    pub host_mem_capacity: f64,
    pub host_mem_used: f64,
}

impl Node {
    pub fn role(&self) -> Role {
        self.kind.role
    }

    pub fn mem_available(&self) -> f64 {
        self.host_mem_capacity - self.host_mem_used
    }

    pub fn hourly_cost(&self) -> f64 {
        self.kind.hourly_cost * f64::from(self.gpus)
    }
}

/// Worst-case profile of one phase of a job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseProfile {
    /// Seconds, assuming every response reaches the token limit.
    pub worst_case_duration: f64,
    /// Host memory in GB cached on each node the phase is pinned to.
    pub mem_footprint: f64,
    pub gpus_required: u32,
}

impl PhaseProfile {
    pub fn new(worst_case_duration: f64, mem_footprint: f64, gpus_required: u32) -> Self {
        Self {
            worst_case_duration,
            mem_footprint,
            gpus_required,
        }
    }

    fn validate(&self, job: JobId, name: &str) -> Result<()> {
        let bad = |reason: String| Error::InvalidJob { job, reason };
        if !(self.worst_case_duration > 0.0 && self.worst_case_duration.is_finite()) {
            return Err(bad(format!(
                "{name} duration must be positive, got {}",
                self.worst_case_duration
            )));
        }
        if !(self.mem_footprint > 0.0 && self.mem_footprint.is_finite()) {
            return Err(bad(format!(
                "{name} memory footprint must be positive, got {}",
                self.mem_footprint
            )));
        }
        if self.gpus_required == 0 {
            return Err(bad(format!("{name} requires zero gpus")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum TailFamily {
    /// Lognormal response length, clipped at the cap.
    Lognormal { mu: f64, sigma: f64 },
    /// Draw uniformly from recorded response lengths (clipped at the cap).
    Empirical { samples: Vec<u32> },
}

/// Response-length distribution of a rollout batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthDistribution {
    pub family: TailFamily,
    pub cap: u32,
}

impl LengthDistribution {
    /// Every response hits the cap.
    pub fn degenerate(cap: u32) -> Self {
        Self {
            family: TailFamily::Empirical { samples: vec![cap] },
            cap,
        }
    }

    /// Lognormal with the given `sigma`, with `mu` chosen so that a fraction
    /// `cap_fraction` of draws lands at or beyond the cap.
    pub fn calibrated_lognormal(cap: u32, sigma: f64, cap_fraction: f64) -> Self {
        let z = standard_normal_quantile(1.0 - cap_fraction);
        let mu = f64::from(cap).ln() - z * sigma;
        Self {
            family: TailFamily::Lognormal { mu, sigma },
            cap,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let raw = match &self.family {
            TailFamily::Lognormal { mu, sigma } => {
                let d = LogNormal::new(*mu, *sigma).expect("validated lognormal parameters");
                let x = d.sample(rng).ceil();
                if x >= f64::from(self.cap) {
                    self.cap
                } else {
                    x as u32
                }
            }
            TailFamily::Empirical { samples } => samples[rng.random_range(0..samples.len())],
        };
        raw.clamp(1, self.cap)
    }

    fn validate(&self, job: JobId) -> Result<()> {
        let bad = |reason: &str| Error::InvalidJob {
            job,
            reason: reason.to_string(),
        };
        if self.cap == 0 {
            return Err(bad("max_tokens must be positive"));
        }
        match &self.family {
            TailFamily::Lognormal { mu, sigma } => {
                if !(mu.is_finite() && *sigma > 0.0 && sigma.is_finite()) {
                    return Err(bad("lognormal tail needs finite mu and positive sigma"));
                }
            }
            TailFamily::Empirical { samples } => {
                if samples.is_empty() {
                    return Err(bad("empirical tail has no samples"));
                }
            }
        }
        Ok(())
    }
}

/// Acklam's rational approximation of the standard normal quantile.
fn standard_normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -standard_normal_quantile(1.0 - p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobSpec {
    pub id: JobId,
    /// Seconds since trace start.
    pub arrival: f64,
    /// Wall-clock lifetime in seconds.
    pub duration: f64,
    pub rollout: PhaseProfile,
    pub train: PhaseProfile,
    /// Tolerated slowdown relative to solo execution (>= 1).
    pub slo: f64,
    pub tail: LengthDistribution,
    pub max_tokens: u32,
}

impl JobSpec {
    /// Starts a job with 8-GPU phases, 7B-class memory footprints, no SLO
    /// pressure and a degenerate response-length distribution.
    pub fn builder(id: u64, roll_s: f64, train_s: f64) -> JobBuilder {
        JobBuilder {
            job: JobSpec {
                id: JobId(id),
                arrival: 0.0,
                duration: 3600.0,
                rollout: PhaseProfile::new(roll_s, 275.7, 8),
                train: PhaseProfile::new(train_s, 240.0, 8),
                slo: f64::INFINITY,
                tail: LengthDistribution::degenerate(8192),
                max_tokens: 8192,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rollout.validate(self.id, "rollout")?;
        self.train.validate(self.id, "train")?;
        if !(self.slo >= 1.0) {
            return Err(Error::InvalidJob {
                job: self.id,
                reason: format!("slo must be >= 1, got {}", self.slo),
            });
        }
        if !(self.arrival >= 0.0 && self.arrival.is_finite()) {
            return Err(Error::InvalidJob {
                job: self.id,
                reason: format!("arrival must be a finite non-negative time, got {}", self.arrival),
            });
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidJob {
                job: self.id,
                reason: format!("duration must be positive, got {}", self.duration),
            });
        }
        if self.tail.cap != self.max_tokens {
            return Err(Error::InvalidJob {
                job: self.id,
                reason: "tail cap must equal max_tokens".into(),
            });
        }
        self.tail.validate(self.id)
    }

    pub fn solo_time(&self) -> f64 {
        solo_time(self)
    }

    pub fn phase(&self, role: Role) -> &PhaseProfile {
        match role {
            Role::Rollout => &self.rollout,
            Role::Training => &self.train,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JobBuilder {
    job: JobSpec,
}

impl JobBuilder {
    pub fn arrival(mut self, t: f64) -> Self {
        self.job.arrival = t;
        self
    }
    pub fn duration(mut self, t: f64) -> Self {
        self.job.duration = t;
        self
    }
    pub fn slo(mut self, slo: f64) -> Self {
        self.job.slo = slo;
        self
    }
    pub fn gpus(mut self, roll: u32, train: u32) -> Self {
        self.job.rollout.gpus_required = roll;
        self.job.train.gpus_required = train;
        self
    }
    pub fn mem(mut self, roll_gb: f64, train_gb: f64) -> Self {
        self.job.rollout.mem_footprint = roll_gb;
        self.job.train.mem_footprint = train_gb;
        self
    }
    pub fn tail(mut self, tail: LengthDistribution) -> Self {
        self.job.max_tokens = tail.cap;
        self.job.tail = tail;
        self
    }
    pub fn build(self) -> Result<JobSpec> {
        self.job.validate()?;
        Ok(self.job)
    }
}

/// Iteration time of a job running alone: rollout plus training.
pub fn solo_time(job: &JobSpec) -> f64 {
    job.rollout.worst_case_duration + job.train.worst_case_duration
}

/// Pinning of one job to concrete rollout and training nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub job_id: JobId,
    pub rollout_nodes: BTreeSet<NodeId>,
    pub train_nodes: BTreeSet<NodeId>,
}

impl Placement {
    pub fn new(
        job_id: JobId,
        rollout_nodes: impl IntoIterator<Item = NodeId>,
        train_nodes: impl IntoIterator<Item = NodeId>,
    ) -> Self {
        Self {
            job_id,
            rollout_nodes: rollout_nodes.into_iter().collect(),
            train_nodes: train_nodes.into_iter().collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.rollout_nodes.len() + self.train_nodes.len()
    }
}

/// A disjoint locality domain: jobs time-multiplexing one rollout pool and
/// one training pool.
#[derive(Debug, Clone, PartialEq)]
pub struct CoExecGroup {
    pub id: GroupId,
    pub jobs: BTreeMap<JobId, JobSpec>,
    pub rollout_pool: BTreeMap<NodeId, Node>,
    pub train_pool: BTreeMap<NodeId, Node>,
    pub placements: BTreeMap<JobId, Placement>,
}

impl CoExecGroup {
    pub fn new(id: GroupId) -> Self {
        Self {
            id,
            jobs: BTreeMap::new(),
            rollout_pool: BTreeMap::new(),
            train_pool: BTreeMap::new(),
            placements: BTreeMap::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.rollout_pool.get(&id).or_else(|| self.train_pool.get(&id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.rollout_pool.values().chain(self.train_pool.values())
    }

    pub fn node_count(&self) -> usize {
        self.rollout_pool.len() + self.train_pool.len()
    }

    pub fn add_node(&mut self, node: Node) {
        match node.role() {
            Role::Rollout => self.rollout_pool.insert(node.id, node),
            Role::Training => self.train_pool.insert(node.id, node),
        };
    }

    pub fn rollout_gpus(&self) -> u32 {
        self.rollout_pool.values().map(|n| n.gpus).sum()
    }

    pub fn train_gpus(&self) -> u32 {
        self.train_pool.values().map(|n| n.gpus).sum()
    }

    /// Sum of worst-case rollout durations of the jobs pinned to each rollout node.
    pub fn rollout_node_loads(&self) -> BTreeMap<NodeId, f64> {
        let mut loads: BTreeMap<NodeId, f64> =
            self.rollout_pool.keys().map(|&id| (id, 0.0)).collect();
        for (jid, p) in &self.placements {
            let d = self.jobs[jid].rollout.worst_case_duration;
            for n in &p.rollout_nodes {
                *loads.entry(*n).or_default() += d;
            }
        }
        loads
    }

    /// Validates node references and role separation of a placement.
    pub fn check_placement(&self, job: &JobSpec, placement: &Placement) -> Result<()> {
        let bad = |reason: String| Error::InvalidPlacement {
            job: job.id,
            reason,
        };
        if placement.job_id != job.id {
            return Err(bad(format!("placement is for job {}", placement.job_id)));
        }
        if placement.rollout_nodes.is_empty() || placement.train_nodes.is_empty() {
            return Err(bad("placement needs rollout and training nodes".into()));
        }
        for n in &placement.rollout_nodes {
            if !self.rollout_pool.contains_key(n) {
                return match self.train_pool.contains_key(n) {
                    true => Err(bad(format!("{n} is a training node"))),
                    false => Err(Error::UnknownNode(*n)),
                };
            }
        }
        for n in &placement.train_nodes {
            if !self.train_pool.contains_key(n) {
                return match self.rollout_pool.contains_key(n) {
                    true => Err(bad(format!("{n} is a rollout node"))),
                    false => Err(Error::UnknownNode(*n)),
                };
            }
        }
        Ok(())
    }

    /// Pins `job` with `placement`, reserving host memory on every touched node.
    pub fn admit(&mut self, job: JobSpec, placement: Placement) -> Result<()> {
        self.check_placement(&job, &placement)?;
        if self.jobs.contains_key(&job.id) {
            return Err(Error::InvalidPlacement {
                job: job.id,
                reason: "job already in group".into(),
            });
        }
        for (role, ids) in [
            (Role::Rollout, &placement.rollout_nodes),
            (Role::Training, &placement.train_nodes),
        ] {
            let need = job.phase(role).mem_footprint;
            for id in ids {
                let node = self.node(*id).expect("checked above");
                if node.host_mem_used + need > node.host_mem_capacity + EPS {
                    return Err(Error::Residency {
                        node: *id,
                        used: node.host_mem_used,
                        need,
                        capacity: node.host_mem_capacity,
                    });
                }
            }
        }
        self.reserve(&job, &placement, 1.0);
        self.placements.insert(job.id, placement);
        self.jobs.insert(job.id, job);
        Ok(())
    }

    /// Removes a job and releases its memory reservations.
    pub fn remove_job(&mut self, id: JobId) -> Option<(JobSpec, Placement)> {
        let job = self.jobs.remove(&id)?;
        let placement = self.placements.remove(&id).expect("placement per job");
        self.reserve(&job, &placement, -1.0);
        Some((job, placement))
    }

    fn reserve(&mut self, job: &JobSpec, placement: &Placement, sign: f64) {
        for id in &placement.rollout_nodes {
            let n = self.rollout_pool.get_mut(id).expect("validated");
            n.host_mem_used = (n.host_mem_used + sign * job.rollout.mem_footprint).max(0.0);
        }
        for id in &placement.train_nodes {
            let n = self.train_pool.get_mut(id).expect("validated");
            n.host_mem_used = (n.host_mem_used + sign * job.train.mem_footprint).max(0.0);
        }
    }

    /// Drops rollout nodes no job is pinned to any more.
    pub fn release_idle_rollout_nodes(&mut self) -> Vec<Node> {
        let used: BTreeSet<NodeId> = self
            .placements
            .values()
            .flat_map(|p| p.rollout_nodes.iter().copied())
            .collect();
        let idle: Vec<NodeId> = self
            .rollout_pool
            .keys()
            .filter(|id| !used.contains(id))
            .copied()
            .collect();
        idle.into_iter()
            .filter_map(|id| self.rollout_pool.remove(&id))
            .collect()
    }
}

/// Assembles a group with fresh nodes; handy for fixtures and experiments.
///
/// Rollout node `k` gets id `group * 1_000_000 + k`, training node `k` gets
/// `group * 1_000_000 + 500_000 + k`.
#[derive(Debug, Clone)]
pub struct GroupBuilder {
    group: CoExecGroup,
    roll_ids: Vec<NodeId>,
    train_ids: Vec<NodeId>,
}

impl GroupBuilder {
    pub fn new(cfg: &ClusterConfig, id: GroupId, rollout_nodes: usize, train_nodes: usize) -> Self {
        let base = id.0 * 1_000_000;
        let mut group = CoExecGroup::new(id);
        let roll_ids: Vec<NodeId> = (0..rollout_nodes as u64).map(|k| NodeId(base + k)).collect();
        let train_ids: Vec<NodeId> = (0..train_nodes as u64)
            .map(|k| NodeId(base + 500_000 + k))
            .collect();
        for &n in &roll_ids {
            group.add_node(cfg.new_node(n, Role::Rollout));
        }
        for &n in &train_ids {
            group.add_node(cfg.new_node(n, Role::Training));
        }
        Self {
            group,
            roll_ids,
            train_ids,
        }
    }

    /// Pins `job` to the given rollout node indices and the whole training pool.
    pub fn job(mut self, job: JobSpec, rollout_nodes: &[usize]) -> Result<Self> {
        let placement = Placement::new(
            job.id,
            rollout_nodes.iter().map(|&k| self.roll_ids[k]),
            self.train_ids.iter().copied(),
        );
        self.group.admit(job, placement)?;
        Ok(self)
    }

    pub fn rollout_node(&self, k: usize) -> NodeId {
        self.roll_ids[k]
    }

    pub fn build(self) -> CoExecGroup {
        self.group
    }
}

/// Whether pinning `job` with `placement` keeps every touched node within its
/// host memory capacity.
pub fn residency_feasible(group: &CoExecGroup, job: &JobSpec, placement: &Placement) -> Result<bool> {
    for (role, ids) in [
        (Role::Rollout, &placement.rollout_nodes),
        (Role::Training, &placement.train_nodes),
    ] {
        let need = job.phase(role).mem_footprint;
        for id in ids {
            let node = group.node(*id).ok_or(Error::UnknownNode(*id))?;
            if node.host_mem_used + need > node.host_mem_capacity + EPS {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn group_with(cap: f64, used: f64) -> CoExecGroup {
        let cfg = ClusterConfig {
            host_mem_gb: cap,
            ..ClusterConfig::default()
        };
        let mut g = CoExecGroup::new(GroupId(0));
        let mut r = cfg.new_node(NodeId(1), Role::Rollout);
        r.host_mem_used = used;
        g.add_node(r);
        g.add_node(cfg.new_node(NodeId(2), Role::Training));
        g
    }

    #[test]
    fn solo_time_sums_phases() {
        let j = JobSpec::builder(1, 100.0, 50.0).build().unwrap();
        assert_eq!(solo_time(&j), 150.0);
        let bl_small = JobSpec::builder(2, 75.0, 75.0).build().unwrap();
        assert_eq!(bl_small.solo_time(), 150.0);
    }

    #[test]
    fn zero_duration_rejected() {
        assert!(JobSpec::builder(1, 0.0, 50.0).build().is_err());
        assert!(JobSpec::builder(1, 10.0, -1.0).build().is_err());
        assert!(JobSpec::builder(1, 10.0, 5.0).slo(0.9).build().is_err());
    }

    #[test]
    fn residency_14b_rollout_on_tight_node() {
        let g = group_with(2000.0, 1600.0);
        let j = JobSpec::builder(1, 10.0, 10.0).mem(445.4, 456.1).build().unwrap();
        let p = Placement::new(j.id, [NodeId(1)], [NodeId(2)]);
        assert!(!residency_feasible(&g, &j, &p).unwrap());
    }

    #[test]
    fn residency_empty_node_accepts() {
        let g = group_with(1024.0, 0.0);
        let j = JobSpec::builder(1, 10.0, 10.0).build().unwrap();
        let p = Placement::new(j.id, [NodeId(1)], [NodeId(2)]);
        assert!(residency_feasible(&g, &j, &p).unwrap());
    }

    #[test]
    fn residency_7b_rollouts_stack_to_three() {
        let cfg = ClusterConfig::default();
        let mut g = CoExecGroup::new(GroupId(0));
        g.add_node(cfg.new_node(NodeId(1), Role::Rollout));
        g.add_node(cfg.new_node(NodeId(2), Role::Training));
        let mk = |id| {
            JobSpec::builder(id, 10.0, 10.0)
                .mem(275.7, 100.0)
                .build()
                .unwrap()
        };
        for id in 0..2 {
            let j = mk(id);
            let p = Placement::new(j.id, [NodeId(1)], [NodeId(2)]);
            g.admit(j, p).unwrap();
        }
        // 551.4 + 275.7 = 827.1 <= 1024
        let third = mk(2);
        let p = Placement::new(third.id, [NodeId(1)], [NodeId(2)]);
        assert!(residency_feasible(&g, &third, &p).unwrap());
        g.admit(third, p).unwrap();
        // 827.1 + 275.7 = 1102.8 > 1024
        let fourth = mk(3);
        let p = Placement::new(fourth.id, [NodeId(1)], [NodeId(2)]);
        assert!(!residency_feasible(&g, &fourth, &p).unwrap());
        assert!(matches!(g.admit(fourth, p), Err(Error::Residency { .. })));
    }

    #[test]
    fn residency_unknown_node_errors() {
        let g = group_with(1024.0, 0.0);
        let j = JobSpec::builder(1, 10.0, 10.0).build().unwrap();
        let p = Placement::new(j.id, [NodeId(99)], [NodeId(2)]);
        assert!(matches!(
            residency_feasible(&g, &j, &p),
            Err(Error::UnknownNode(NodeId(99)))
        ));
    }

    #[test]
    fn remove_releases_memory_and_idle_nodes() {
        let mut g = group_with(1024.0, 0.0);
        let j = JobSpec::builder(1, 10.0, 10.0).build().unwrap();
        g.admit(j, Placement::new(JobId(1), [NodeId(1)], [NodeId(2)]))
            .unwrap();
        assert!(g.rollout_pool[&NodeId(1)].host_mem_used > 0.0);
        g.remove_job(JobId(1)).unwrap();
        assert_eq!(g.rollout_pool[&NodeId(1)].host_mem_used, 0.0);
        assert_eq!(g.train_pool[&NodeId(2)].host_mem_used, 0.0);
        assert_eq!(g.release_idle_rollout_nodes().len(), 1);
        assert!(g.rollout_pool.is_empty());
    }

    #[test]
    fn config_requires_one_kind_per_role() {
        let mut cfg = ClusterConfig::default();
        cfg.gpu_kinds.push(GpuKind::h20());
        assert!(cfg.validate().is_err());
        let json = r#"{"gpu_kinds":[{"name":"H20","hourly_cost":1.85,"role":"rollout"},
            {"name":"H800","hourly_cost":5.28,"role":"training"}],
            "gpus_per_node":8,"host_mem_gb":1024,"max_group_residency":5}"#;
        assert_eq!(ClusterConfig::from_json_str(json).unwrap(), ClusterConfig::default());
    }

    #[test]
    fn calibrated_tail_hits_cap_about_five_percent() {
        let d = LengthDistribution::calibrated_lognormal(8192, 0.8, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let at_cap = (0..n).filter(|_| d.sample(&mut rng) == 8192).count();
        let frac = at_cap as f64 / n as f64;
        assert!((frac - 0.05).abs() < 0.005, "fraction at cap {frac}");
    }

    #[test]
    fn degenerate_tail_always_at_cap() {
        let d = LengthDistribution::degenerate(4096);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| d.sample(&mut rng) == 4096));
    }
}
