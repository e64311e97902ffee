//! Intra-group scheduling: round-robin meta-iterations, co-execution time
//! estimation for admission control, and long-tail migration.

mod engine;
pub mod migration;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{CoExecGroup, GroupId, JobId, JobSpec, NodeId, Placement, EPS};
use crate::error::{Error, Result};
use engine::{steady_state, Draw, Engine, Layout, TailProgress};
pub use migration::{consolidation_size, maybe_migrate, MigrationConfig, MigrationDecision, TailState};

/// One phase execution inside a meta-iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseExec {
    pub job_id: JobId,
    pub start: f64,
    pub end: f64,
    /// Per-node occupancy `(node, from, to)`; differs from `start..end` when
    /// the phase inherits nodes from a migrating predecessor or migrates itself.
    pub node_spans: Vec<(NodeId, f64, f64)>,
    pub migrated: bool,
}

impl PhaseExec {
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.node_spans.iter().map(|s| s.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaIterationSchedule {
    pub cycle_idx: usize,
    pub rollout_sequence: Vec<PhaseExec>,
    pub train_sequence: Vec<PhaseExec>,
    /// Seconds until the next meta-iteration starts the same phases again.
    pub cycle_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupLoad {
    /// Longest solo iteration among the members.
    pub cycle: f64,
    /// Busy time of the bottleneck node per meta-iteration.
    pub load: f64,
}

impl GroupLoad {
    pub fn idle_fraction(&self) -> f64 {
        if self.cycle > 0.0 {
            1.0 - self.load / self.cycle
        } else {
            0.0
        }
    }
}

pub fn group_load(group: &CoExecGroup) -> GroupLoad {
    let train: f64 = group.jobs.values().map(|j| j.train.worst_case_duration).sum();
    let roll = group
        .rollout_node_loads()
        .into_values()
        .fold(0.0_f64, f64::max);
    let cycle = group.jobs.values().map(|j| j.solo_time()).fold(0.0_f64, f64::max);
    GroupLoad {
        cycle,
        load: train.max(roll),
    }
}

/// `load >= cycle`: the group has no slack left. Equality counts as saturated.
pub fn is_saturated(group: &CoExecGroup) -> bool {
    let l = group_load(group);
    l.load >= l.cycle - EPS * l.cycle.max(1.0)
}

/// Knobs of the intra-group scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntraConfig {
    /// Delay between a job's training end and its next rollout start
    /// (parameter synchronization). Zero unless the sync model is enabled.
    pub handoff_s: f64,
    pub migration: MigrationConfig,
    /// Responses per rollout batch in stochastic mode.
    pub rollout_batch: usize,
}

impl Default for IntraConfig {
    fn default() -> Self {
        Self {
            handoff_s: 0.0,
            migration: MigrationConfig::default(),
            rollout_batch: 1000,
        }
    }
}

impl IntraConfig {
    /// Worst-case round-robin schedule of one steady-state meta-iteration,
    /// shifted to start at zero.
    pub fn round_robin_schedule(&self, group: &CoExecGroup) -> MetaIterationSchedule {
        let layout = Layout::new(group);
        let ss = steady_state(&layout, self.handoff_s, true);
        let Some(out) = ss.cycles.into_iter().nth(ss.cycle) else {
            return MetaIterationSchedule {
                cycle_idx: 0,
                rollout_sequence: Vec::new(),
                train_sequence: Vec::new(),
                cycle_time: 0.0,
            };
        };
        let (mut rolls, mut trains) = out.phases.expect("recorded");
        let origin = rolls
            .iter()
            .chain(&trains)
            .flat_map(|p| p.node_spans.iter().map(|s| s.1).chain([p.start]))
            .fold(f64::INFINITY, f64::min);
        for p in rolls.iter_mut().chain(trains.iter_mut()) {
            p.start -= origin;
            p.end -= origin;
            for s in &mut p.node_spans {
                s.1 -= origin;
                s.2 -= origin;
            }
        }
        MetaIterationSchedule {
            cycle_idx: 0,
            rollout_sequence: rolls,
            train_sequence: trains,
            cycle_time: ss.period,
        }
    }

    /// Steady-state meta-iteration period under worst-case durations. Every
    /// member completes one iteration per period.
    pub fn coexec_period(&self, group: &CoExecGroup) -> f64 {
        steady_state(&Layout::new(group), self.handoff_s, false).period
    }

    pub fn estimate_coexec_time(&self, group: &CoExecGroup, job: JobId) -> Result<f64> {
        if !group.jobs.contains_key(&job) {
            return Err(Error::JobNotInGroup(job));
        }
        Ok(self.coexec_period(group))
    }

    /// Every member meets `T_co-exec <= slo * T_solo`.
    pub fn slo_satisfied(&self, group: &CoExecGroup) -> bool {
        if group.jobs.is_empty() {
            return true;
        }
        let period = self.coexec_period(group);
        group.jobs.values().all(|j| slo_holds(j, period))
    }

    pub fn slo_check(&self, group: &CoExecGroup, candidate: &JobSpec, placement: &Placement) -> Result<bool> {
        let mut after = group.clone();
        after.check_placement(candidate, placement)?;
        if after.admit(candidate.clone(), placement.clone()).is_err() {
            return Ok(false);
        }
        Ok(self.slo_satisfied(&after))
    }

    /// Simulates `n_cycles` meta-iterations with rollout durations drawn from
    /// each job's response-length distribution. A rollout lasts
    /// `worst_case * max_len / cap`, so a batch that hits the cap reproduces
    /// the worst case. Deterministic for a given seed.
    pub fn run_meta_iterations(&self, group: &CoExecGroup, seed: u64, n_cycles: usize) -> Vec<MetaIterationSchedule> {
        let n_cycles = n_cycles.max(1);
        let layout = Layout::new(group);
        if layout.len() == 0 {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut engine = Engine::new(&layout, self.handoff_s, self.migration);
        let mut outs = Vec::with_capacity(n_cycles + 1);
        let mut lengths = Vec::with_capacity(self.rollout_batch);
        for _ in 0..=n_cycles {
            let draws: Vec<Draw> = layout
                .jobs
                .iter()
                .map(|j| self.draw(j, &mut rng, &mut lengths))
                .collect();
            outs.push(engine.step(&draws, true));
        }
        let next_start: Vec<f64> = outs.iter().map(|o| o.roll_start[0]).collect();
        outs.into_iter()
            .take(n_cycles)
            .enumerate()
            .map(|(c, o)| {
                let (rolls, trains) = o.phases.expect("recorded");
                MetaIterationSchedule {
                    cycle_idx: c,
                    rollout_sequence: rolls,
                    train_sequence: trains,
                    cycle_time: next_start[c + 1] - next_start[c],
                }
            })
            .collect()
    }

    /// Mean realized meta-iteration period over `n_cycles` stochastic cycles.
    pub fn realized_period(&self, group: &CoExecGroup, seed: u64, n_cycles: usize) -> f64 {
        let n_cycles = n_cycles.max(1);
        let layout = Layout::new(group);
        if layout.len() == 0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut engine = Engine::new(&layout, self.handoff_s, self.migration);
        let mut lengths = Vec::with_capacity(self.rollout_batch);
        let mut first = 0.0;
        let mut last = 0.0;
        for c in 0..=n_cycles {
            let draws: Vec<Draw> = layout
                .jobs
                .iter()
                .map(|j| self.draw(j, &mut rng, &mut lengths))
                .collect();
            let out = engine.step(&draws, false);
            if c == 0 {
                first = out.roll_start[0];
            }
            last = out.roll_start[0];
        }
        (last - first) / n_cycles as f64
    }

    fn draw(&self, job: &JobSpec, rng: &mut ChaCha8Rng, lengths: &mut Vec<u32>) -> Draw {
        let batch = self.rollout_batch.max(1);
        lengths.clear();
        lengths.extend((0..batch).map(|_| job.tail.sample(rng)));
        let cap = f64::from(job.tail.cap);
        let max_len = *lengths.iter().max().expect("non-empty batch");
        let wc = job.rollout.worst_case_duration;
        let tail = (self.migration.threshold > 0.0 && self.migration.threshold <= 1.0).then(|| {
            let k = ((self.migration.threshold * batch as f64) - 1e-9).ceil().max(1.0) as usize;
            let (_, kth, _) = lengths.select_nth_unstable(k.min(batch) - 1);
            let q = *kth;
            let done = lengths.iter().filter(|&&l| l <= q).count();
            TailProgress {
                threshold_offset: wc * f64::from(q) / cap,
                completed_fraction: done as f64 / batch as f64,
                stragglers: batch - done,
            }
        });
        Draw {
            roll: wc * f64::from(max_len) / cap,
            train: job.train.worst_case_duration,
            tail,
        }
    }
}

fn slo_holds(job: &JobSpec, period: f64) -> bool {
    period <= job.slo * job.solo_time() * (1.0 + EPS)
}

pub fn round_robin_schedule(group: &CoExecGroup) -> MetaIterationSchedule {
    IntraConfig::default().round_robin_schedule(group)
}

pub fn estimate_coexec_time(group: &CoExecGroup, job: JobId) -> Result<f64> {
    IntraConfig::default().estimate_coexec_time(group, job)
}

pub fn slo_check(group: &CoExecGroup, candidate: &JobSpec, placement: &Placement) -> Result<bool> {
    IntraConfig::default().slo_check(group, candidate, placement)
}

pub fn run_meta_iterations(group: &CoExecGroup, seed: u64, n_cycles: usize) -> Vec<MetaIterationSchedule> {
    IntraConfig::default().run_meta_iterations(group, seed, n_cycles)
}

/// Utilization change from repeating `job` once more per meta-iteration,
/// with the cycle prolonged by that job's solo time. Never positive for a
/// group that is not overloaded.
pub fn verify_repetition_suboptimal(group: &CoExecGroup, job: JobId) -> Result<f64> {
    let k = group.jobs.get(&job).ok_or(Error::JobNotInGroup(job))?;
    let gl = group_load(group);
    if gl.load > gl.cycle * (1.0 + EPS) {
        return Err(Error::Overloaded {
            load: gl.load,
            cycle: gl.cycle,
        });
    }
    let roll: f64 = group.jobs.values().map(|j| j.rollout.worst_case_duration).sum();
    let train: f64 = group.jobs.values().map(|j| j.train.worst_case_duration).sum();
    let t1 = gl.cycle;
    let before = (roll + train) / t1;
    let after = (roll + k.rollout.worst_case_duration + train + k.train.worst_case_duration)
        / (t1 + k.solo_time());
    Ok(after - before)
}

/// Writes schedules as CSV: `group,pool,job,node,start_s,end_s,cycle_idx,migrated`.
pub fn write_schedule_csv<W: Write>(w: W, rows: &[(GroupId, &MetaIterationSchedule)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["group", "pool", "job", "node", "start_s", "end_s", "cycle_idx", "migrated"])?;
    for (gid, sched) in rows {
        for (pool, seq) in [("rollout", &sched.rollout_sequence), ("train", &sched.train_sequence)] {
            for p in seq.iter() {
                for (node, from, to) in &p.node_spans {
                    out.write_record([
                        gid.0.to_string(),
                        pool.to_string(),
                        p.job_id.0.to_string(),
                        node.0.to_string(),
                        format!("{from:.6}"),
                        format!("{to:.6}"),
                        sched.cycle_idx.to_string(),
                        p.migrated.to_string(),
                    ])?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}
