//! First-order cost model of pushing updated weights from the training pool
//! to the rollout pool across a slow inter-cluster link.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes per second of a link rated in gigabits per second.
pub fn gbps(rate: f64) -> f64 {
    rate * 1e9 / 8.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Broadcast {
    Ring,
    Tree,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncTopology {
    pub model_bytes: u64,
    /// Training GPUs, each sending one shard.
    pub train_gpus: u32,
    /// Rollout GPUs that each need the full model.
    pub rollout_gpus: u32,
    /// Bytes/s of the inter-cluster link.
    pub cross_bw: f64,
    /// Bytes/s of the rollout cluster fabric.
    pub intra_bw: f64,
    pub per_stream_overhead: f64,
    pub broadcast: Broadcast,
}

impl Default for SyncTopology {
    fn default() -> Self {
        Self {
            model_bytes: 14_000_000_000,
            train_gpus: 8,
            rollout_gpus: 8,
            cross_bw: gbps(20.0),
            intra_bw: gbps(400.0),
            per_stream_overhead: 0.0,
            broadcast: Broadcast::Ring,
        }
    }
}

impl SyncTopology {
    pub fn validate(&self) -> Result<()> {
        let ok = self.model_bytes > 0
            && self.train_gpus > 0
            && self.rollout_gpus > 0
            && self.cross_bw > 0.0
            && self.intra_bw > 0.0
            && self.per_stream_overhead >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("sync topology needs positive sizes and bandwidths".into()))
        }
    }

    fn m(&self) -> f64 {
        self.model_bytes as f64
    }
}

/// Shard sizes sent by each training GPU; they sum to the model size.
pub fn shard_sizes(t: &SyncTopology) -> Vec<u64> {
    let n = u64::from(t.train_gpus.max(1));
    let (q, r) = (t.model_bytes / n, t.model_bytes % n);
    (0..n).map(|i| q + u64::from(i < r)).collect()
}

pub fn flat_cross_traffic(t: &SyncTopology) -> u64 {
    u64::from(t.rollout_gpus) * t.model_bytes
}

pub fn hierarchical_cross_traffic(t: &SyncTopology) -> u64 {
    shard_sizes(t).iter().sum()
}

/// Every rollout GPU pulls a full copy over the slow link.
pub fn flat_sync_time(t: &SyncTopology) -> f64 {
    flat_cross_traffic(t) as f64 / t.cross_bw + t.per_stream_overhead
}

/// Stage times `(scatter, broadcast)` of the two-stage scheme.
pub fn stage_times(t: &SyncTopology) -> (f64, f64) {
    let scatter = t.m() / t.cross_bw + t.per_stream_overhead;
    let r = f64::from(t.rollout_gpus);
    let broadcast = match t.broadcast {
        Broadcast::Ring => t.m() * (r - 1.0) / r / t.intra_bw,
        Broadcast::Tree => t.m() * r.log2().ceil() / t.intra_bw,
    };
    (scatter, broadcast)
}

/// Scatter of disjoint shards over the slow link, then dissemination inside
/// the rollout cluster, pipelined at shard granularity.
pub fn hierarchical_sync_time(t: &SyncTopology) -> f64 {
    let (s1, s2) = stage_times(t);
    s1.max(s2) + s1.min(s2) / f64::from(t.train_gpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub flat_s: f64,
    pub hierarchical_s: f64,
    pub speedup: f64,
    pub flat_cross_bytes: u64,
    pub hierarchical_cross_bytes: u64,
}

pub fn compare(t: &SyncTopology) -> Result<SyncReport> {
    t.validate()?;
    let flat_s = flat_sync_time(t);
    let hierarchical_s = hierarchical_sync_time(t);
    Ok(SyncReport {
        flat_s,
        hierarchical_s,
        speedup: flat_s / hierarchical_s,
        flat_cross_bytes: flat_cross_traffic(t),
        hierarchical_cross_bytes: hierarchical_cross_traffic(t),
    })
}
