use thiserror::Error;

use crate::domain::{GroupId, JobId, NodeId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid job {job}: {reason}")]
    InvalidJob { job: JobId, reason: String },

    #[error("invalid cluster config: {0}")]
    InvalidConfig(String),

    #[error("node {0} is not part of the group")]
    UnknownNode(NodeId),

    #[error("job {0} is not part of the group")]
    JobNotInGroup(JobId),

    #[error("group {0} does not exist")]
    UnknownGroup(GroupId),

    #[error("placement for job {job} is invalid: {reason}")]
    InvalidPlacement { job: JobId, reason: String },

    #[error("residency exceeded on node {node}: {used:.1} GB + {need:.1} GB > {capacity:.1} GB")]
    Residency {
        node: NodeId,
        used: f64,
        need: f64,
        capacity: f64,
    },

    #[error("group after change no longer contains node {0} present before")]
    NotAnExtension(NodeId),

    #[error("meta-iteration time is zero")]
    ZeroMetaIteration,

    #[error("migration threshold {0} must lie in (0, 1]")]
    InvalidThreshold(f64),

    #[error("group is overloaded (load {load:.3} s > cycle {cycle:.3} s)")]
    Overloaded { load: f64, cycle: f64 },

    #[error("job {job} cannot be admitted: {reason}")]
    Admission { job: JobId, reason: String },

    #[error(
        "offline optimum over {jobs} jobs exceeds the exact-search cap of {cap}; \
         use the sampling (windowed) mode instead"
    )]
    InstanceTooLarge { jobs: usize, cap: usize },

    #[error("trace line {line}: {reason}")]
    TraceLine { line: usize, reason: String },

    #[error("unknown workload profile `{0}`")]
    UnknownProfile(String),

    #[error("unknown policy `{name}`; valid policies: {valid}")]
    UnknownPolicy { name: String, valid: String },

    #[error("audit failed: {0}")]
    Audit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
