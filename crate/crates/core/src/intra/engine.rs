//! Cycle-by-cycle evaluation of a round-robin meta-iteration.
//!
//! Within a cycle each node runs the phases pinned to it in the fixed group
//! order, and each phase starts as soon as its job dependency and its nodes
//! allow. Because the order never changes, one pass over the jobs per cycle
//! yields every start time: a job's rollout only waits on its own previous
//! training phase and on earlier entries of its nodes' queues, and a
//! training phase waits on its own rollout and on the previous training
//! phase in the pool.

use std::collections::BTreeSet;

use crate::domain::{CoExecGroup, JobSpec, NodeId};
use crate::intra::migration::{maybe_migrate, MigrationConfig, MigrationDecision, TailState};
use crate::intra::PhaseExec;

const MAX_PERIOD: usize = 16;
const MAX_CYCLES: usize = 512;

/// Fixed execution order and node layout of a group.
pub(crate) struct Layout<'g> {
    pub jobs: Vec<&'g JobSpec>,
    pub roll_nodes: Vec<NodeId>,
    /// Per job, indices into `roll_nodes`.
    pub roll_idx: Vec<Vec<usize>>,
    pub train_nodes: Vec<NodeId>,
}

impl<'g> Layout<'g> {
    /// Jobs in descending solo time, ties by ascending id.
    pub fn new(group: &'g CoExecGroup) -> Self {
        let mut jobs: Vec<&JobSpec> = group.jobs.values().collect();
        jobs.sort_by(|a, b| {
            b.solo_time()
                .total_cmp(&a.solo_time())
                .then_with(|| a.id.cmp(&b.id))
        });
        let roll_nodes: Vec<NodeId> = group.rollout_pool.keys().copied().collect();
        let roll_idx = jobs
            .iter()
            .map(|j| {
                group.placements[&j.id]
                    .rollout_nodes
                    .iter()
                    .map(|n| roll_nodes.binary_search(n).expect("placement within pool"))
                    .collect()
            })
            .collect();
        Self {
            jobs,
            roll_nodes,
            roll_idx,
            train_nodes: group.train_pool.keys().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }
}

/// Realized durations of one job in one cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Draw {
    pub roll: f64,
    pub train: f64,
    pub tail: Option<TailProgress>,
}

/// Where the threshold of completed responses was crossed inside a rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TailProgress {
    /// Seconds after rollout start.
    pub threshold_offset: f64,
    pub completed_fraction: f64,
    pub stragglers: usize,
}

pub(crate) struct CycleOutput {
    pub roll_start: Vec<f64>,
    pub train_start: Vec<f64>,
    pub phases: Option<(Vec<PhaseExec>, Vec<PhaseExec>)>,
}

pub(crate) struct Engine<'a, 'g> {
    layout: &'a Layout<'g>,
    handoff: f64,
    migration: MigrationConfig,
    roll_free: Vec<f64>,
    roll_turn: Vec<f64>,
    train_free: f64,
    job_ready: Vec<f64>,
}

impl<'a, 'g> Engine<'a, 'g> {
    pub fn new(layout: &'a Layout<'g>, handoff: f64, migration: MigrationConfig) -> Self {
        Self {
            layout,
            handoff,
            migration,
            roll_free: vec![0.0; layout.roll_nodes.len()],
            roll_turn: vec![0.0; layout.roll_nodes.len()],
            train_free: 0.0,
            job_ready: vec![0.0; layout.len()],
        }
    }

    pub fn step(&mut self, draws: &[Draw], record: bool) -> CycleOutput {
        let n = self.layout.len();
        let mut roll_start = Vec::with_capacity(n);
        let mut train_start = Vec::with_capacity(n);
        let mut rolls = Vec::new();
        let mut trains = Vec::new();

        for (j, draw) in draws.iter().enumerate().take(n) {
            let nodes = &self.layout.roll_idx[j];
            let turn = nodes
                .iter()
                .map(|&i| self.roll_turn[i])
                .fold(self.job_ready[j], f64::max);
            let mut start = turn;
            if nodes.iter().all(|&i| self.roll_free[i] > start) {
                start = nodes.iter().map(|&i| self.roll_free[i]).fold(f64::INFINITY, f64::min);
            }
            let span_start: Vec<f64> = nodes.iter().map(|&i| self.roll_free[i].max(start)).collect();

            let decision = match (self.migration.enabled, draw.tail) {
                (true, Some(tp)) => {
                    let state = TailState {
                        job_id: self.layout.jobs[j].id,
                        completed_fraction: tp.completed_fraction,
                        straggler_count: tp.stragglers,
                        active_nodes: nodes.iter().map(|&i| self.layout.roll_nodes[i]).collect(),
                        consolidation_nodes: BTreeSet::new(),
                    };
                    maybe_migrate(&state, self.migration.threshold, self.migration.pause_s)
                        .unwrap_or(MigrationDecision::Stay)
                        .into_migration(tp.threshold_offset)
                }
                _ => None,
            };

            let (end, migrated) = match decision {
                Some((keep, pause, offset)) => {
                    let end = start + draw.roll + pause;
                    let released_at = start + offset;
                    for (k, &i) in nodes.iter().enumerate() {
                        if k < keep {
                            self.roll_free[i] = end;
                        } else {
                            self.roll_free[i] = released_at.max(span_start[k]);
                        }
                        self.roll_turn[i] = released_at;
                    }
                    (end, true)
                }
                None => {
                    let end = start + draw.roll;
                    for &i in nodes {
                        self.roll_free[i] = end;
                        self.roll_turn[i] = end;
                    }
                    (end, false)
                }
            };

            let t_start = end.max(self.train_free);
            let t_end = t_start + draw.train;
            self.train_free = t_end;
            self.job_ready[j] = t_end + self.handoff;
            roll_start.push(start);
            train_start.push(t_start);

            if record {
                let id = self.layout.jobs[j].id;
                let node_spans = nodes
                    .iter()
                    .zip(&span_start)
                    .map(|(&i, &s)| (self.layout.roll_nodes[i], s, self.roll_free[i]))
                    .collect();
                rolls.push(PhaseExec {
                    job_id: id,
                    start,
                    end,
                    node_spans,
                    migrated,
                });
                trains.push(PhaseExec {
                    job_id: id,
                    start: t_start,
                    end: t_end,
                    node_spans: self
                        .layout
                        .train_nodes
                        .iter()
                        .map(|&nid| (nid, t_start, t_end))
                        .collect(),
                    migrated: false,
                });
            }
        }
        CycleOutput {
            roll_start,
            train_start,
            phases: record.then_some((rolls, trains)),
        }
    }
}

impl MigrationDecision {
    fn into_migration(self, offset: f64) -> Option<(usize, f64, f64)> {
        match self {
            MigrationDecision::Stay => None,
            MigrationDecision::Migrate {
                consolidate_onto,
                pause_s,
                ..
            } => Some((consolidate_onto.len(), pause_s, offset)),
        }
    }
}

pub(crate) fn worst_case_draws(layout: &Layout<'_>) -> Vec<Draw> {
    layout
        .jobs
        .iter()
        .map(|j| Draw {
            roll: j.rollout.worst_case_duration,
            train: j.train.worst_case_duration,
            tail: None,
        })
        .collect()
}

/// Steady state of the deterministic worst-case schedule.
pub(crate) struct SteadyState {
    /// Seconds between consecutive starts of the same phase.
    pub period: f64,
    /// First cycle from which the schedule repeats.
    pub cycle: usize,
    pub cycles: Vec<CycleOutput>,
}

/// Runs worst-case cycles until the start times repeat up to a constant shift.
pub(crate) fn steady_state(layout: &Layout<'_>, handoff: f64, record: bool) -> SteadyState {
    if layout.len() == 0 {
        return SteadyState {
            period: 0.0,
            cycle: 0,
            cycles: Vec::new(),
        };
    }
    let draws = worst_case_draws(layout);
    let mut engine = Engine::new(layout, handoff, MigrationConfig::disabled());
    let mut cycles: Vec<CycleOutput> = Vec::new();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for c in 0..MAX_CYCLES {
        let out = engine.step(&draws, record);
        let mut x = out.roll_start.clone();
        x.extend_from_slice(&out.train_start);
        starts.push(x);
        cycles.push(out);
        for p in 1..=MAX_PERIOD.min(c) {
            if let Some(shift) = constant_shift(&starts[c], &starts[c - p]) {
                return SteadyState {
                    period: shift / p as f64,
                    cycle: c - p,
                    cycles,
                };
            }
        }
    }
    // not reached for well-formed groups; fall back to the late average
    let half = MAX_CYCLES / 2;
    let period = (starts[MAX_CYCLES - 1][0] - starts[half][0]) / (MAX_CYCLES - 1 - half) as f64;
    SteadyState {
        period,
        cycle: half,
        cycles,
    }
}

fn constant_shift(a: &[f64], b: &[f64]) -> Option<f64> {
    let shift = a[0] - b[0];
    let scale = a.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let tol = 1e-9 * scale;
    a.iter()
        .zip(b)
        .all(|(x, y)| ((x - y) - shift).abs() <= tol)
        .then_some(shift)
}
