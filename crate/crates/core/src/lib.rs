//! Co-execution scheduling of reinforcement learning post-training jobs on
//! disaggregated rollout and training pools.

pub mod audit;
pub mod baselines;
pub mod cost;
pub mod domain;
pub mod error;
pub mod inter;
pub mod intra;
pub mod simkit;
pub mod syncmodel;
pub mod trace;

#[cfg(test)]
mod testutil;

pub use domain::{
    residency_feasible, ClusterConfig, CoExecGroup, GpuKind, GroupBuilder, GroupId, JobId, JobSpec, LengthDistribution,
    Node, NodeId, PhaseProfile, Placement, Role, TailFamily,
};
pub use error::{Error, Result};
pub use baselines::PolicyKind;
pub use inter::Cluster;
pub use simkit::{replay, ReplayConfig, SimReport};
