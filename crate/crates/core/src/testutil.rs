use crate::domain::{ClusterConfig, CoExecGroup, GroupBuilder, GroupId, JobSpec};

/// Group with one training node; each entry is `(roll_s, train_s, rollout node index)`.
pub fn group_of(jobs: &[(f64, f64, usize)]) -> CoExecGroup {
    let nodes = jobs.iter().map(|j| j.2 + 1).max().unwrap_or(1);
    let mut b = GroupBuilder::new(&ClusterConfig::default(), GroupId(0), nodes, 1);
    for (i, &(r, t, n)) in jobs.iter().enumerate() {
        let job = JobSpec::builder(i as u64, r, t).mem(10.0, 10.0).build().unwrap();
        b = b.job(job, &[n]).unwrap();
    }
    b.build()
}

/// All jobs on a single rollout node and a single training node.
pub fn one_node_group(jobs: &[(f64, f64)]) -> CoExecGroup {
    let v: Vec<_> = jobs.iter().map(|&(r, t)| (r, t, 0)).collect();
    group_of(&v)
}
