use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{JobId, NodeId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MigrationConfig {
    pub enabled: bool,
    /// Completed fraction of responses that marks a rollout phase as tail-bound.
    pub threshold: f64,
    /// Extra seconds stragglers spend being moved.
    pub pause_s: f64,
}

impl Default for MigrationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            threshold: 0.8,
            pause_s: 5.0,
        }
    }
}

impl MigrationConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }
}

/// Progress of an active rollout phase.
#[derive(Debug, Clone, PartialEq)]
pub struct TailState {
    pub job_id: JobId,
    pub completed_fraction: f64,
    pub straggler_count: usize,
    /// Nodes the phase is currently running on, ascending.
    pub active_nodes: Vec<NodeId>,
    /// Nodes stragglers were moved to, empty until a migration happened.
    pub consolidation_nodes: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MigrationDecision {
    Stay,
    Migrate {
        consolidate_onto: Vec<NodeId>,
        release: Vec<NodeId>,
        pause_s: f64,
    },
}

/// Number of nodes stragglers are packed onto: `ceil((1 - threshold) * nodes)`, at least one.
pub fn consolidation_size(threshold: f64, nodes: usize) -> usize {
    let raw = (1.0 - threshold) * nodes as f64;
    ((raw - 1e-9).ceil().max(1.0) as usize).min(nodes.max(1))
}

/// Decides whether a tail-bound rollout phase should hand most of its nodes
/// to the next queued phase.
pub fn maybe_migrate(state: &TailState, threshold: f64, pause_s: f64) -> Result<MigrationDecision> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidThreshold(threshold));
    }
    if state.completed_fraction + 1e-12 < threshold
        || state.straggler_count == 0
        || !state.consolidation_nodes.is_empty()
    {
        return Ok(MigrationDecision::Stay);
    }
    let k = consolidation_size(threshold, state.active_nodes.len());
    if k >= state.active_nodes.len() {
        // nothing would be freed
        return Ok(MigrationDecision::Stay);
    }
    let (keep, release) = state.active_nodes.split_at(k);
    Ok(MigrationDecision::Migrate {
        consolidate_onto: keep.to_vec(),
        release: release.to_vec(),
        pause_s,
    })
}
