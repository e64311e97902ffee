//! Provisioning cost and utilization accounting.

use serde::{Deserialize, Serialize};

use crate::domain::CoExecGroup;
use crate::error::{Error, Result};
use crate::intra::MetaIterationSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub rollout_cost: f64,
    pub train_cost: f64,
    pub total: f64,
}

/// Hourly price of every GPU provisioned for the group, busy or idle.
pub fn group_cost(group: &CoExecGroup) -> CostBreakdown {
    let rollout_cost: f64 = group.rollout_pool.values().map(|n| n.hourly_cost()).sum();
    let train_cost: f64 = group.train_pool.values().map(|n| n.hourly_cost()).sum();
    CostBreakdown {
        rollout_cost,
        train_cost,
        total: rollout_cost + train_cost,
    }
}

/// Cost increase of `after` over `before`; `after` must keep every node of `before`.
pub fn marginal_cost(before: &CoExecGroup, after: &CoExecGroup) -> Result<f64> {
    if let Some(missing) = before.nodes().find(|n| after.node(n.id).is_none()) {
        return Err(Error::NotAnExtension(missing.id));
    }
    Ok(group_cost(after).total - group_cost(before).total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilizationPair {
    pub u_rollout: f64,
    pub u_train: f64,
    pub meta_iteration: f64,
}

impl UtilizationPair {
    pub fn sum(&self) -> f64 {
        self.u_rollout + self.u_train
    }

    /// More work than one meta-iteration can hold; the values exceed 1.
    pub fn overloaded(&self) -> bool {
        self.u_rollout > 1.0 + 1e-9 || self.u_train > 1.0 + 1e-9
    }
}

/// Work per pool over one meta-iteration, counting each job's phase once.
///
/// Values above 1 are reported as-is for overloaded groups.
pub fn utilization(group: &CoExecGroup, schedule: &MetaIterationSchedule) -> Result<UtilizationPair> {
    let t_meta = schedule.cycle_time;
    if !(t_meta > 0.0) {
        return Err(Error::ZeroMetaIteration);
    }
    let roll: f64 = group.jobs.values().map(|j| j.rollout.worst_case_duration).sum();
    let train: f64 = group.jobs.values().map(|j| j.train.worst_case_duration).sum();
    Ok(UtilizationPair {
        u_rollout: roll / t_meta,
        u_train: train / t_meta,
        meta_iteration: t_meta,
    })
}
