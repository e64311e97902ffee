//! Synthetic workload generation and discrete-event cluster replay.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{check_residency, check_slo, relative_gap, AuditReport};
use crate::baselines::{colocated_rate, greedy_place, random_place, BlockSolver, OptimalConfig, PolicyKind};
use crate::cost::group_cost;
use crate::domain::{ClusterConfig, CoExecGroup, GroupId, JobId, JobSpec, LengthDistribution, NodeId, EPS};
use crate::error::{Error, Result};
use crate::inter::{isolated_candidate, Cluster, Decision, PlacementCandidate};
use crate::intra::IntraConfig;

pub const TIMESERIES_SCHEMA: &str = "coexec-timeseries/v1";
pub const SUITE_SCHEMA: &str = "coexec-sensitivity/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum JobType {
    #[serde(rename = "BL")]
    Balanced,
    #[serde(rename = "RH")]
    RolloutHeavy,
    #[serde(rename = "TH")]
    TrainHeavy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum JobSize {
    Small,
    Medium,
    Large,
}

impl JobSize {
    /// Host-memory footprints (rollout, training) in GB, per model scale.
    pub fn footprints(self) -> (f64, f64) {
        match self {
            JobSize::Small => (113.4, 156.2),
            JobSize::Medium => (275.7, 240.0),
            JobSize::Large => (445.4, 456.1),
        }
    }
}

/// Uniform phase-duration ranges of one job class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub job_type: JobType,
    pub size: JobSize,
    pub roll_range: (f64, f64),
    pub train_range: (f64, f64),
}

impl WorkloadProfile {
    pub fn new(job_type: JobType, size: JobSize) -> Self {
        use JobSize::*;
        use JobType::*;
        let (roll_range, train_range) = match (job_type, size) {
            (Balanced, Small) => ((50.0, 100.0), (50.0, 100.0)),
            (Balanced, Medium) => ((100.0, 200.0), (100.0, 200.0)),
            (Balanced, Large) => ((200.0, 300.0), (200.0, 300.0)),
            (RolloutHeavy, Small) => ((100.0, 200.0), (25.0, 50.0)),
            (RolloutHeavy, Medium) => ((200.0, 400.0), (50.0, 100.0)),
            (RolloutHeavy, Large) => ((400.0, 600.0), (100.0, 200.0)),
            (TrainHeavy, Small) => ((25.0, 50.0), (100.0, 200.0)),
            (TrainHeavy, Medium) => ((50.0, 100.0), (200.0, 400.0)),
            (TrainHeavy, Large) => ((100.0, 200.0), (400.0, 600.0)),
        };
        Self {
            job_type,
            size,
            roll_range,
            train_range,
        }
    }

    pub fn of_type(job_type: JobType) -> Vec<Self> {
        [JobSize::Small, JobSize::Medium, JobSize::Large]
            .into_iter()
            .map(|s| Self::new(job_type, s))
            .collect()
    }
}

/// Job classes a trace draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mix {
    Bl,
    Rh,
    Th,
    Mixed,
}

impl Mix {
    pub const ALL: [Mix; 4] = [Mix::Bl, Mix::Rh, Mix::Th, Mix::Mixed];

    pub fn profiles(self) -> Vec<WorkloadProfile> {
        match self {
            Mix::Bl => WorkloadProfile::of_type(JobType::Balanced),
            Mix::Rh => WorkloadProfile::of_type(JobType::RolloutHeavy),
            Mix::Th => WorkloadProfile::of_type(JobType::TrainHeavy),
            Mix::Mixed => [JobType::Balanced, JobType::RolloutHeavy, JobType::TrainHeavy]
                .into_iter()
                .flat_map(WorkloadProfile::of_type)
                .collect(),
        }
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mix::Bl => "BL",
            Mix::Rh => "RH",
            Mix::Th => "TH",
            Mix::Mixed => "Mixed",
        })
    }
}

impl FromStr for Mix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bl" | "balanced" => Ok(Mix::Bl),
            "rh" | "rollout-heavy" => Ok(Mix::Rh),
            "th" | "train-heavy" => Ok(Mix::Th),
            "mixed" | "mix" => Ok(Mix::Mixed),
            _ => Err(Error::UnknownProfile(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SloMode {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Default for SloMode {
    fn default() -> Self {
        SloMode::Uniform { lo: 1.0, hi: 2.0 }
    }
}

impl fmt::Display for SloMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SloMode::Fixed { value } => write!(f, "{value}"),
            SloMode::Uniform { lo, hi } => write!(f, "unif({lo},{hi})"),
        }
    }
}

impl FromStr for SloMode {
    type Err = Error;

    /// `1.2`, `fixed:1.2`, `uniform` or `unif(1,2)`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let bad = || Error::InvalidConfig(format!("bad SLO mode `{s}`"));
        if t == "uniform" || t == "unif" {
            return Ok(SloMode::default());
        }
        if let Some(inner) = t
            .strip_prefix("unif(")
            .or_else(|| t.strip_prefix("uniform("))
            .and_then(|r| r.strip_suffix(')'))
        {
            let (a, b) = inner.split_once(',').ok_or_else(bad)?;
            let lo: f64 = a.trim().parse().map_err(|_| bad())?;
            let hi: f64 = b.trim().parse().map_err(|_| bad())?;
            if !(lo >= 1.0 && hi >= lo) {
                return Err(bad());
            }
            return Ok(SloMode::Uniform { lo, hi });
        }
        let value: f64 = t.strip_prefix("fixed:").unwrap_or(&t).parse().map_err(|_| bad())?;
        if !(value >= 1.0) {
            return Err(bad());
        }
        Ok(SloMode::Fixed { value })
    }
}

/// When jobs arrive and how long they stay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArrivalModel {
    /// Poisson arrivals; lognormal durations with the given mean, capped.
    Poisson {
        jobs_per_hour: f64,
        mean_duration_h: f64,
        max_duration_h: f64,
    },
    /// `(arrival_s, duration_s)` pairs taken from an existing trace.
    Replay { slots: Vec<(f64, f64)> },
    /// Everything arrives at zero and stays for the same time.
    Batch { duration_s: f64 },
}

impl Default for ArrivalModel {
    /// 300 jobs over 580 hours, mean duration 14.4 h, longest 142.9 h.
    fn default() -> Self {
        ArrivalModel::Poisson {
            jobs_per_hour: 300.0 / 580.0,
            mean_duration_h: 14.4,
            max_duration_h: 142.9,
        }
    }
}

impl ArrivalModel {
    pub fn from_trace(jobs: &[JobSpec]) -> Self {
        ArrivalModel::Replay {
            slots: jobs.iter().map(|j| (j.arrival, j.duration)).collect(),
        }
    }
}

const DURATION_SIGMA: f64 = 1.0;
const MAX_TOKENS: u32 = 8192;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Synthesizes a trace. Arrivals, job classes and SLOs come from separate
/// random streams, so traces that differ only in SLO mode share everything else.
pub fn generate_trace(n_jobs: usize, mix: Mix, slo: SloMode, arrival: &ArrivalModel, seed: u64) -> Result<Vec<JobSpec>> {
    if n_jobs == 0 {
        return Err(Error::InvalidConfig("a trace needs at least one job".into()));
    }
    let mut arr_rng = stream(seed, 1);
    let mut cls_rng = stream(seed, 2);
    let mut slo_rng = stream(seed, 3);

    let slots: Vec<(f64, f64)> = match arrival {
        ArrivalModel::Poisson {
            jobs_per_hour,
            mean_duration_h,
            max_duration_h,
        } => {
            if !(*jobs_per_hour > 0.0 && *mean_duration_h > 0.0 && max_duration_h >= mean_duration_h) {
                return Err(Error::InvalidConfig("bad Poisson arrival parameters".into()));
            }
            let gap = Exp::new(*jobs_per_hour / 3600.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let mu = mean_duration_h.ln() - DURATION_SIGMA * DURATION_SIGMA / 2.0;
            let dur = LogNormal::new(mu, DURATION_SIGMA).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let mut t = 0.0;
            (0..n_jobs)
                .map(|i| {
                    if i > 0 {
                        t += gap.sample(&mut arr_rng);
                    }
                    let h = dur.sample(&mut arr_rng).clamp(0.1, *max_duration_h);
                    (t, h * 3600.0)
                })
                .collect()
        }
        ArrivalModel::Replay { slots } => {
            if slots.len() < n_jobs {
                return Err(Error::InvalidConfig(format!(
                    "arrival file has {} entries, {n_jobs} requested",
                    slots.len()
                )));
            }
            slots[..n_jobs].to_vec()
        }
        ArrivalModel::Batch { duration_s } => vec![(0.0, *duration_s); n_jobs],
    };

    let profiles = mix.profiles();
    let tail = LengthDistribution::calibrated_lognormal(MAX_TOKENS, 0.8, 0.05);
    slots
        .into_iter()
        .enumerate()
        .map(|(i, (arrival, duration))| {
            let p = profiles[cls_rng.random_range(0..profiles.len())];
            let roll = cls_rng.random_range(p.roll_range.0..=p.roll_range.1);
            let train = cls_rng.random_range(p.train_range.0..=p.train_range.1);
            let slo = match slo {
                SloMode::Fixed { value } => value,
                SloMode::Uniform { lo, hi } if hi > lo => slo_rng.random_range(lo..hi),
                SloMode::Uniform { lo, .. } => lo,
            };
            let (rm, tm) = p.size.footprints();
            JobSpec::builder(i as u64, roll, train)
                .arrival(arrival)
                .duration(duration)
                .slo(slo)
                .gpus(8, 8)
                .mem(rm, tm)
                .tail(tail.clone())
                .build()
        })
        .collect()
}

/// How meta-iterations are timed during replay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecMode {
    /// Every rollout hits the token cap.
    WorstCase,
    /// Sampled response lengths, averaged over `cycles` meta-iterations.
    Stochastic { cycles: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimalMode {
    /// Solve every live set exactly; the trace must fit the exact cap.
    Exact,
    /// Solve live sets up to the window exactly, lower-bound larger ones.
    Windowed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub cluster: ClusterConfig,
    pub intra: IntraConfig,
    pub mode: ExecMode,
    pub optimal: OptimalConfig,
    pub optimal_mode: OptimalMode,
    /// Record wall-clock decision latency; off for byte-identical logs.
    pub timing: bool,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            cluster: ClusterConfig::default(),
            intra: IntraConfig::default(),
            mode: ExecMode::WorstCase,
            optimal: OptimalConfig::default(),
            optimal_mode: OptimalMode::Exact,
            timing: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePoint {
    pub t_s: f64,
    pub rollout_gpus: Option<u32>,
    pub train_gpus: Option<u32>,
    pub cost_per_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub job: JobId,
    pub group: Option<GroupId>,
    pub iterations: f64,
    /// Wall time per iteration over the worst-case solo iteration time.
    pub slowdown: Option<f64>,
    pub slo: f64,
    pub slo_met: bool,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policy: PolicyKind,
    pub seed: u64,
    pub jobs: usize,
    pub admitted: usize,
    pub rejected: usize,
    /// Dollars, integrated over the cost-rate series.
    pub total_cost: f64,
    /// Dollars, summed over group lifetimes.
    pub total_cost_by_group: f64,
    pub slo_attainment: f64,
    pub mean_slowdown: Option<f64>,
    pub peak_rollout_gpus: Option<u32>,
    pub peak_train_gpus: Option<u32>,
    pub peak_cost_per_h: f64,
    pub makespan_s: f64,
    pub audit: AuditReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub summary: Summary,
    pub timeseries: Vec<TimePoint>,
    pub jobs: Vec<JobOutcome>,
    pub decisions: Vec<Decision>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Depart,
    Arrive,
}

/// Per-key cost accrual: closes an interval whenever the rate changes.
#[derive(Debug, Default)]
struct Ledger {
    open: BTreeMap<u64, (f64, f64)>,
    total: f64,
}

impl Ledger {
    fn set(&mut self, key: u64, t: f64, rate: f64) {
        if let Some((since, r)) = self.open.get(&key).copied() {
            if (r - rate).abs() <= EPS * r.abs().max(1.0) {
                return;
            }
            self.total += r * (t - since) / 3600.0;
        }
        if rate == 0.0 {
            self.open.remove(&key);
        } else {
            self.open.insert(key, (t, rate));
        }
    }

    fn sync(&mut self, t: f64, rates: &BTreeMap<u64, f64>) {
        let gone: Vec<u64> = self.open.keys().filter(|k| !rates.contains_key(k)).copied().collect();
        for k in gone {
            self.set(k, t, 0.0);
        }
        for (&k, &r) in rates {
            self.set(k, t, r);
        }
    }
}

enum State {
    Groups { cluster: Cluster, rng: ChaCha8Rng },
    Colocated { live: BTreeMap<JobId, (f64, u32)> },
    Optimal { live: BTreeMap<JobId, JobSpec>, solver: BlockSolver, window: usize, last: crate::baselines::WindowResult },
}

struct Replay<'a> {
    policy: PolicyKind,
    cfg: &'a ReplayConfig,
    seed: u64,
    state: State,
    periods: BTreeMap<GroupId, (Vec<(JobId, Vec<NodeId>)>, f64)>,
    iterations: BTreeMap<JobId, f64>,
    home: BTreeMap<JobId, GroupId>,
    rejected: BTreeSet<JobId>,
    decisions: Vec<Decision>,
    ledger: Ledger,
    audit: AuditReport,
}

fn signature(g: &CoExecGroup) -> Vec<(JobId, Vec<NodeId>)> {
    g.placements
        .iter()
        .map(|(j, p)| (*j, p.rollout_nodes.iter().chain(&p.train_nodes).copied().collect()))
        .collect()
}

fn mix_seed(seed: u64, sig: &[(JobId, Vec<NodeId>)]) -> u64 {
    // FNV-1a over the member ids
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for (j, nodes) in sig {
        for v in std::iter::once(j.0).chain(nodes.iter().map(|n| n.0)) {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl<'a> Replay<'a> {
    fn new(policy: PolicyKind, cfg: &'a ReplayConfig, seed: u64) -> Self {
        let state = match policy {
            PolicyKind::Colocated => State::Colocated { live: BTreeMap::new() },
            PolicyKind::OfflineOptimal => State::Optimal {
                live: BTreeMap::new(),
                solver: BlockSolver::new(cfg.cluster.clone(), cfg.intra),
                window: match cfg.optimal_mode {
                    OptimalMode::Exact => cfg.optimal.exact_cap,
                    OptimalMode::Windowed => cfg.optimal.window,
                },
                last: crate::baselines::WindowResult {
                    cost: 0.0,
                    exact: true,
                    rollout_gpus: Some(0),
                    train_gpus: Some(0),
                },
            },
            _ => State::Groups {
                cluster: Cluster::new(cfg.cluster.clone(), cfg.intra),
                rng: ChaCha8Rng::seed_from_u64(seed),
            },
        };
        Self {
            policy,
            cfg,
            seed,
            state,
            periods: BTreeMap::new(),
            iterations: BTreeMap::new(),
            home: BTreeMap::new(),
            rejected: BTreeSet::new(),
            decisions: Vec::new(),
            ledger: Ledger::default(),
            audit: AuditReport::default(),
        }
    }

    fn advance(&mut self, dt: f64) {
        if dt <= 0.0 {
            return;
        }
        match &self.state {
            State::Groups { cluster, .. } => {
                for (gid, g) in cluster.groups() {
                    let period = self.periods[gid].1;
                    if period > 0.0 {
                        for j in g.jobs.keys() {
                            *self.iterations.entry(*j).or_default() += dt / period;
                        }
                    }
                }
            }
            State::Colocated { live } => {
                for j in live.keys() {
                    *self.iterations.entry(*j).or_default() += dt;
                }
            }
            State::Optimal { live, .. } => {
                for j in live.keys() {
                    *self.iterations.entry(*j).or_default() += dt;
                }
            }
        }
    }

    fn arrive(&mut self, job: &JobSpec) {
        let t0 = Instant::now();
        let policy = self.policy;
        let timing = self.cfg.timing;
        match &mut self.state {
            State::Groups { cluster, rng } => {
                let decided = match policy {
                    PolicyKind::RollMux => cluster.admit(job),
                    _ => {
                        let next = cluster.next_node_id();
                        let picked: Result<PlacementCandidate> = match policy {
                            PolicyKind::Random => random_place(&cluster.config, job, cluster.groups().values(), next, rng),
                            PolicyKind::GreedyMostIdle => greedy_place(&cluster.config, job, cluster.groups().values(), next),
                            _ => isolated_candidate(&cluster.config, job, next),
                        };
                        picked.and_then(|c| {
                            let gid = cluster.commit(job, &c)?;
                            Ok(Decision {
                                job: job.id,
                                strategy: c.strategy,
                                group: gid,
                                delta_cost: c.delta_cost,
                                candidates_evaluated: 1,
                                latency_us: t0.elapsed().as_micros() as u64,
                            })
                        })
                    }
                };
                match decided {
                    Ok(mut d) => {
                        if !timing {
                            d.latency_us = 0;
                        }
                        self.home.insert(job.id, d.group);
                        self.decisions.push(d);
                    }
                    Err(_) => {
                        self.rejected.insert(job.id);
                    }
                }
            }
            State::Colocated { live } => {
                if cfg_accepts(&self.cfg.cluster, job) {
                    live.insert(job.id, (colocated_rate(&self.cfg.cluster, job), job.train.gpus_required));
                } else {
                    self.rejected.insert(job.id);
                }
            }
            State::Optimal { live, .. } => {
                if cfg_accepts(&self.cfg.cluster, job) {
                    live.insert(job.id, job.clone());
                } else {
                    self.rejected.insert(job.id);
                }
            }
        }
    }

    fn depart(&mut self, job: JobId) {
        if self.rejected.contains(&job) {
            return;
        }
        match &mut self.state {
            State::Groups { cluster, .. } => {
                if let Err(e) = cluster.depart(job) {
                    self.audit.record_residency(vec![format!("departure of {job}: {e}")]);
                }
            }
            State::Colocated { live } => {
                live.remove(&job);
            }
            State::Optimal { live, .. } => {
                live.remove(&job);
            }
        }
    }

    /// Recomputes periods and rates after the events at `t`; returns the new point.
    fn refresh(&mut self, t: f64) -> TimePoint {
        match &mut self.state {
            State::Groups { cluster, .. } => {
                self.periods.retain(|gid, _| cluster.groups().contains_key(gid));
                for (gid, g) in cluster.groups() {
                    let sig = signature(g);
                    if self.periods.get(gid).is_some_and(|(s, _)| *s == sig) {
                        continue;
                    }
                    let period = match self.cfg.mode {
                        ExecMode::WorstCase => cluster.intra.coexec_period(g),
                        ExecMode::Stochastic { cycles } => {
                            cluster.intra.realized_period(g, mix_seed(self.seed, &sig), cycles)
                        }
                    };
                    self.periods.insert(*gid, (sig, period));
                }
                let rates: BTreeMap<u64, f64> = cluster
                    .groups()
                    .iter()
                    .map(|(gid, g)| (gid.0, group_cost(g).total))
                    .collect();
                self.ledger.sync(t, &rates);
                self.audit.record_residency(check_residency(cluster));
                if self.policy == PolicyKind::RollMux {
                    self.audit.record_slo(check_slo(cluster));
                }
                TimePoint {
                    t_s: t,
                    rollout_gpus: Some(cluster.rollout_gpus()),
                    train_gpus: Some(cluster.train_gpus()),
                    cost_per_h: cluster.cost_rate(),
                }
            }
            State::Colocated { live } => {
                let rates: BTreeMap<u64, f64> = live.iter().map(|(j, r)| (j.0, r.0)).collect();
                self.ledger.sync(t, &rates);
                TimePoint {
                    t_s: t,
                    rollout_gpus: Some(0),
                    train_gpus: Some(live.values().map(|r| r.1).sum()),
                    cost_per_h: live.values().map(|r| r.0).sum(),
                }
            }
            State::Optimal {
                live,
                solver,
                window,
                last,
            } => {
                let jobs: Vec<JobSpec> = live.values().cloned().collect();
                *last = solver.windowed_detail(&jobs, *window);
                let rates: BTreeMap<u64, f64> = [(0u64, last.cost)].into_iter().filter(|(_, r)| *r > 0.0).collect();
                self.ledger.sync(t, &rates);
                TimePoint {
                    t_s: t,
                    rollout_gpus: last.rollout_gpus,
                    train_gpus: last.train_gpus,
                    cost_per_h: last.cost,
                }
            }
        }
    }

    fn live_nodes(&self) -> usize {
        match &self.state {
            State::Groups { cluster, .. } => cluster.live_nodes(),
            _ => 0,
        }
    }
}

fn cfg_accepts(cfg: &ClusterConfig, job: &JobSpec) -> bool {
    cfg.check_job(job).is_ok()
}

/// Replays `trace` under `policy`. Deterministic per `(trace, policy, cfg, seed)`
/// apart from decision latencies when timing is on.
pub fn replay(trace: &[JobSpec], policy: PolicyKind, cfg: &ReplayConfig, seed: u64) -> Result<SimReport> {
    cfg.cluster.validate()?;
    for j in trace {
        j.validate()?;
    }
    let ids: BTreeSet<JobId> = trace.iter().map(|j| j.id).collect();
    if ids.len() != trace.len() {
        return Err(Error::InvalidConfig("duplicate job ids in trace".into()));
    }
    if policy == PolicyKind::OfflineOptimal
        && cfg.optimal_mode == OptimalMode::Exact
        && trace.len() > cfg.optimal.exact_cap
    {
        return Err(Error::InstanceTooLarge {
            jobs: trace.len(),
            cap: cfg.optimal.exact_cap,
        });
    }

    let mut events: Vec<(f64, EventKind, JobId, usize)> = Vec::with_capacity(trace.len() * 2);
    for (i, j) in trace.iter().enumerate() {
        events.push((j.arrival, EventKind::Arrive, j.id, i));
        events.push((j.arrival + j.duration, EventKind::Depart, j.id, i));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut sim = Replay::new(policy, cfg, seed);
    let mut series: Vec<TimePoint> = Vec::new();
    let mut t_prev = events.first().map(|e| e.0).unwrap_or(0.0);
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        sim.advance(t - t_prev);
        while i < events.len() && events[i].0 == t {
            let (_, kind, id, idx) = events[i];
            match kind {
                EventKind::Depart => sim.depart(id),
                EventKind::Arrive => sim.arrive(&trace[idx]),
            }
            i += 1;
        }
        series.push(sim.refresh(t));
        t_prev = t;
    }
    let end = t_prev;
    sim.ledger.sync(end, &BTreeMap::new());

    let total_cost: f64 = series
        .windows(2)
        .map(|w| w[0].cost_per_h * (w[1].t_s - w[0].t_s) / 3600.0)
        .sum();
    let mut audit = std::mem::take(&mut sim.audit);
    audit.leaked_nodes = sim.live_nodes();
    if audit.leaked_nodes > 0 {
        audit.messages.push(format!("{} nodes still provisioned after the last departure", audit.leaked_nodes));
    }
    audit.cost_relative_gap = relative_gap(total_cost, sim.ledger.total);

    let per_iteration = matches!(policy, PolicyKind::Colocated | PolicyKind::OfflineOptimal);
    let jobs: Vec<JobOutcome> = trace
        .iter()
        .map(|j| {
            let rejected = sim.rejected.contains(&j.id);
            let slowdown = if rejected || per_iteration {
                None
            } else {
                let it = sim.iterations.get(&j.id).copied().unwrap_or(0.0);
                Some(if it > 0.0 { j.duration / (it * j.solo_time()) } else { f64::INFINITY })
            };
            let slo_met = !rejected && slowdown.is_none_or(|s| s <= j.slo * (1.0 + 1e-9));
            JobOutcome {
                job: j.id,
                group: sim.home.get(&j.id).copied(),
                iterations: if per_iteration {
                    sim.iterations.get(&j.id).copied().unwrap_or(0.0) / j.solo_time()
                } else {
                    sim.iterations.get(&j.id).copied().unwrap_or(0.0)
                },
                slowdown,
                slo: j.slo,
                slo_met,
                rejected,
            }
        })
        .collect();

    let met = jobs.iter().filter(|o| o.slo_met).count();
    let slows: Vec<f64> = jobs.iter().filter_map(|o| o.slowdown).collect();
    let summary = Summary {
        policy,
        seed,
        jobs: trace.len(),
        admitted: trace.len() - sim.rejected.len(),
        rejected: sim.rejected.len(),
        total_cost,
        total_cost_by_group: sim.ledger.total,
        slo_attainment: if trace.is_empty() { 1.0 } else { met as f64 / trace.len() as f64 },
        mean_slowdown: (!slows.is_empty()).then(|| slows.iter().sum::<f64>() / slows.len() as f64),
        peak_rollout_gpus: series.iter().map(|p| p.rollout_gpus).try_fold(0u32, |m, g| g.map(|g| m.max(g))),
        peak_train_gpus: series.iter().map(|p| p.train_gpus).try_fold(0u32, |m, g| g.map(|g| m.max(g))),
        peak_cost_per_h: series.iter().map(|p| p.cost_per_h).fold(0.0, f64::max),
        makespan_s: end - series.first().map(|p| p.t_s).unwrap_or(end),
        audit,
    };
    Ok(SimReport {
        summary,
        timeseries: series,
        jobs,
        decisions: sim.decisions,
    })
}

fn opt_u32(v: Option<u32>) -> String {
    v.map(|g| g.to_string()).unwrap_or_default()
}

/// `t_s,rollout_gpus,train_gpus,cost_per_h`, after a schema comment line.
pub fn write_timeseries_csv<W: Write>(mut w: W, series: &[TimePoint]) -> Result<()> {
    writeln!(w, "# schema: {TIMESERIES_SCHEMA}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t_s", "rollout_gpus", "train_gpus", "cost_per_h"])?;
    for p in series {
        out.write_record([
            p.t_s.to_string(),
            opt_u32(p.rollout_gpus),
            opt_u32(p.train_gpus),
            format!("{:.6}", p.cost_per_h + 0.0),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_decisions_jsonl<W: Write>(mut w: W, decisions: &[Decision]) -> Result<()> {
    for d in decisions {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// One configuration of the sensitivity sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub sweep: String,
    pub setting: String,
    pub mix: Mix,
    pub slo: SloMode,
    pub max_group_residency: usize,
}

/// Workload type, SLO and residency sweeps, each varying one knob around
/// the default (Mixed, Unif(1,2), residency 5).
pub fn scenarios() -> Vec<Scenario> {
    let base = |sweep: &str, setting: String, mix, slo, res| Scenario {
        sweep: sweep.to_string(),
        setting,
        mix,
        slo,
        max_group_residency: res,
    };
    let mut out = Vec::new();
    for mix in Mix::ALL {
        out.push(base("workload", mix.to_string(), mix, SloMode::default(), 5));
    }
    for slo in [
        SloMode::Fixed { value: 1.2 },
        SloMode::Fixed { value: 1.5 },
        SloMode::Fixed { value: 2.0 },
        SloMode::default(),
    ] {
        out.push(base("slo", slo.to_string(), Mix::Mixed, slo, 5));
    }
    for res in 2..=5 {
        out.push(base("residency", res.to_string(), Mix::Mixed, SloMode::default(), res));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub jobs: usize,
    pub seed: u64,
    pub arrival: ArrivalModel,
    pub replay: ReplayConfig,
    pub policies: Vec<PolicyKind>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            jobs: 300,
            seed: 1,
            arrival: ArrivalModel::default(),
            replay: ReplayConfig {
                optimal_mode: OptimalMode::Windowed,
                timing: false,
                ..ReplayConfig::default()
            },
            policies: vec![
                PolicyKind::RollMux,
                PolicyKind::Random,
                PolicyKind::GreedyMostIdle,
                PolicyKind::OfflineOptimal,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub sweep: String,
    pub setting: String,
    pub policy: PolicyKind,
    pub total_cost: f64,
    /// Cost over the offline optimum of the same trace (or over RollMux when
    /// the optimum is not part of the run).
    pub normalized_cost: f64,
    pub slo_attainment: f64,
    pub rejected: usize,
    pub audit_clean: bool,
}

/// Every scenario under every policy, run in parallel.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<(Scenario, SimReport)>> {
    let work: Vec<(Scenario, PolicyKind)> = scenarios()
        .into_iter()
        .flat_map(|s| cfg.policies.iter().map(move |&p| (s.clone(), p)))
        .collect();
    work.into_par_iter()
        .map(|(s, p)| {
            let trace = generate_trace(cfg.jobs, s.mix, s.slo, &cfg.arrival, cfg.seed)?;
            let mut rc = cfg.replay.clone();
            rc.cluster.max_group_residency = s.max_group_residency;
            Ok((s, replay(&trace, p, &rc, cfg.seed)?))
        })
        .collect()
}

pub fn sensitivity_suite(cfg: &SuiteConfig) -> Result<Vec<SuiteRow>> {
    Ok(suite_rows(&run_suite(cfg)?))
}

pub fn suite_rows(runs: &[(Scenario, SimReport)]) -> Vec<SuiteRow> {
    let reference = |s: &Scenario| {
        let of = |p| {
            runs.iter()
                .find(|(t, r)| t == s && r.summary.policy == p)
                .map(|(_, r)| r.summary.total_cost)
        };
        of(PolicyKind::OfflineOptimal).or_else(|| of(PolicyKind::RollMux))
    };
    runs.iter()
        .map(|(s, r)| {
            let norm = reference(s).filter(|c| *c > 0.0).map(|c| r.summary.total_cost / c);
            SuiteRow {
                sweep: s.sweep.clone(),
                setting: s.setting.clone(),
                policy: r.summary.policy,
                total_cost: r.summary.total_cost,
                normalized_cost: norm.unwrap_or(f64::NAN),
                slo_attainment: r.summary.slo_attainment,
                rejected: r.summary.rejected,
                audit_clean: r.summary.audit.is_clean(),
            }
        })
        .collect()
}

pub fn write_suite_csv<W: Write>(mut w: W, rows: &[SuiteRow]) -> Result<()> {
    writeln!(w, "# schema: {SUITE_SCHEMA}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "sweep",
        "setting",
        "policy",
        "total_cost",
        "normalized_cost",
        "slo_attainment",
        "rejected",
        "audit_clean",
    ])?;
    for r in rows {
        out.write_record([
            r.sweep.clone(),
            r.setting.clone(),
            r.policy.to_string(),
            r.total_cost.to_string(),
            r.normalized_cost.to_string(),
            r.slo_attainment.to_string(),
            r.rejected.to_string(),
            r.audit_clean.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn job(id: u64, r: f64, t: f64, slo: f64, arrival: f64, hours: f64) -> JobSpec {
        JobSpec::builder(id, r, t)
            .slo(slo)
            .arrival(arrival)
            .duration(hours * 3600.0)
            .build()
            .unwrap()
    }

    fn quiet() -> ReplayConfig {
        ReplayConfig {
            timing: false,
            ..ReplayConfig::default()
        }
    }

    #[test]
    fn profile_table() {
        let p = WorkloadProfile::new(JobType::RolloutHeavy, JobSize::Large);
        assert_eq!(p.roll_range, (400.0, 600.0));
        assert_eq!(p.train_range, (100.0, 200.0));
        assert_eq!(Mix::Mixed.profiles().len(), 9);
        assert!(matches!("nope".parse::<Mix>(), Err(Error::UnknownProfile(_))));
    }

    #[test]
    fn slo_mode_parsing() {
        assert_eq!("1.2".parse::<SloMode>().unwrap(), SloMode::Fixed { value: 1.2 });
        assert_eq!("uniform".parse::<SloMode>().unwrap(), SloMode::default());
        assert_eq!(
            "unif(1, 1.5)".parse::<SloMode>().unwrap(),
            SloMode::Uniform { lo: 1.0, hi: 1.5 }
        );
        assert!("0.5".parse::<SloMode>().is_err());
        assert_eq!(SloMode::default().to_string().parse::<SloMode>().unwrap(), SloMode::default());
    }

    #[test]
    fn traces_are_deterministic_and_follow_modes() {
        let a = generate_trace(300, Mix::Mixed, SloMode::default(), &ArrivalModel::default(), 4).unwrap();
        let b = generate_trace(300, Mix::Mixed, SloMode::default(), &ArrivalModel::default(), 4).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|j| (1.0..2.0).contains(&j.slo)));
        assert!(a.windows(2).all(|w| w[0].arrival <= w[1].arrival));
        assert!(a.iter().all(|j| j.duration <= 142.9 * 3600.0 + 1e-6));
        let fixed = generate_trace(300, Mix::Mixed, SloMode::Fixed { value: 1.2 }, &ArrivalModel::default(), 4).unwrap();
        assert!(fixed.iter().all(|j| j.slo == 1.2));
        for (x, y) in a.iter().zip(&fixed) {
            assert_eq!((x.arrival, x.duration, x.rollout, x.train), (y.arrival, y.duration, y.rollout, y.train));
        }
        assert!(generate_trace(0, Mix::Bl, SloMode::default(), &ArrivalModel::default(), 1).is_err());
    }

    #[test]
    fn profile_ranges_respected() {
        let t = generate_trace(200, Mix::Rh, SloMode::default(), &ArrivalModel::default(), 9).unwrap();
        for j in &t {
            assert!((100.0..=600.0).contains(&j.rollout.worst_case_duration));
            assert!((25.0..=200.0).contains(&j.train.worst_case_duration));
            assert!(j.rollout.worst_case_duration > j.train.worst_case_duration);
        }
    }

    #[test]
    fn single_job_costs_solo() {
        let trace = [job(0, 100.0, 50.0, 1.5, 0.0, 10.0)];
        for p in [PolicyKind::RollMux, PolicyKind::SoloDisagg] {
            let r = replay(&trace, p, &quiet(), 0).unwrap();
            assert!((r.summary.total_cost - 570.40).abs() < 1e-6, "{p}: {}", r.summary.total_cost);
            assert_eq!(r.summary.slo_attainment, 1.0);
            assert!(r.summary.audit.is_clean());
        }
        let co = replay(&trace, PolicyKind::Colocated, &quiet(), 0).unwrap();
        assert!((co.summary.total_cost - 422.40).abs() < 1e-6);
        let opt = replay(&trace, PolicyKind::OfflineOptimal, &quiet(), 0).unwrap();
        assert!((opt.summary.total_cost - 570.40).abs() < 1e-6);
    }

    #[test]
    fn empty_trace_costs_nothing() {
        for p in PolicyKind::ALL {
            let r = replay(&[], p, &quiet(), 0).unwrap();
            assert_eq!(r.summary.total_cost, 0.0);
        }
    }

    #[test]
    fn identical_jobs_scale_linearly_under_solo() {
        let one = replay(&[job(0, 80.0, 80.0, 1.0, 0.0, 2.0)], PolicyKind::SoloDisagg, &quiet(), 0).unwrap();
        let many: Vec<JobSpec> = (0..5).map(|i| job(i, 80.0, 80.0, 1.0, 0.0, 2.0)).collect();
        let five = replay(&many, PolicyKind::SoloDisagg, &quiet(), 0).unwrap();
        assert!((five.summary.total_cost - 5.0 * one.summary.total_cost).abs() < 1e-6);
    }

    #[test]
    fn complementary_pair_beats_solo() {
        let trace = [job(0, 100.0, 50.0, 1.1, 0.0, 5.0), job(1, 50.0, 100.0, 1.1, 600.0, 5.0)];
        let rm = replay(&trace, PolicyKind::RollMux, &quiet(), 0).unwrap();
        let solo = replay(&trace, PolicyKind::SoloDisagg, &quiet(), 0).unwrap();
        assert!(rm.summary.total_cost < solo.summary.total_cost);
        assert_eq!(rm.summary.slo_attainment, 1.0);
        assert!(rm.summary.audit.is_clean(), "{:?}", rm.summary.audit);
        assert_eq!(rm.decisions.len(), 2);
    }

    #[test]
    fn replay_is_deterministic() {
        let trace = generate_trace(40, Mix::Mixed, SloMode::default(), &ArrivalModel::default(), 2).unwrap();
        for p in [PolicyKind::RollMux, PolicyKind::Random, PolicyKind::GreedyMostIdle] {
            let a = replay(&trace, p, &quiet(), 5).unwrap();
            let b = replay(&trace, p, &quiet(), 5).unwrap();
            assert_eq!(a, b);
            assert!(a.summary.audit.residency_violations == 0 && a.summary.audit.leaked_nodes == 0);
            assert!(a.summary.audit.cost_relative_gap < 1e-6);
        }
    }

    #[test]
    fn stochastic_mode_is_no_slower_than_worst_case() {
        let trace = generate_trace(20, Mix::Rh, SloMode::default(), &ArrivalModel::default(), 3).unwrap();
        let wc = replay(&trace, PolicyKind::RollMux, &quiet(), 1).unwrap();
        let st = replay(
            &trace,
            PolicyKind::RollMux,
            &ReplayConfig {
                mode: ExecMode::Stochastic { cycles: 20 },
                ..quiet()
            },
            1,
        )
        .unwrap();
        assert_eq!(wc.summary.total_cost, st.summary.total_cost);
        assert_eq!(st.summary.slo_attainment, 1.0);
        assert!(st.summary.mean_slowdown.unwrap() <= wc.summary.mean_slowdown.unwrap() + 1e-9);
    }

    #[test]
    fn exact_optimum_refuses_large_traces() {
        let trace = generate_trace(20, Mix::Mixed, SloMode::default(), &ArrivalModel::default(), 2).unwrap();
        assert!(matches!(
            replay(&trace, PolicyKind::OfflineOptimal, &quiet(), 0),
            Err(Error::InstanceTooLarge { jobs: 20, .. })
        ));
    }

    #[test]
    fn timeseries_csv_has_schema_line() {
        let trace = [job(0, 100.0, 50.0, 1.5, 0.0, 1.0)];
        let r = replay(&trace, PolicyKind::RollMux, &quiet(), 0).unwrap();
        let mut buf = Vec::new();
        write_timeseries_csv(&mut buf, &r.timeseries).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("# schema: {TIMESERIES_SCHEMA}"));
        assert_eq!(lines[1], "t_s,rollout_gpus,train_gpus,cost_per_h");
        assert_eq!(lines[2], "0,8,8,57.040000");
        assert_eq!(lines[3], "3600,0,0,0.000000");
    }

    #[test]
    fn scenario_grid() {
        let s = scenarios();
        assert_eq!(s.len(), 12);
        assert_eq!(s.iter().filter(|x| x.sweep == "slo").count(), 4);
    }
}
