//! Independent reference computations used by the acceptance suite.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::Write;

/// One job of a reference schedule: worst-case phase lengths and the rollout
/// nodes it needs all at once.
#[derive(Debug, Clone)]
pub struct RefJob {
    pub roll: f64,
    pub train: f64,
    pub nodes: Vec<usize>,
}

/// Prints a criterion line that is visible even when test output is captured.
pub fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[criterion {id}] {verdict} {name}: {detail}");
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Long-run period of the cyclic schedule in which every rollout node serves
/// its jobs in `roll_order` and the training pool serves them in
/// `train_order`, each job running each phase once per cycle. A rollout
/// starts only when all of its nodes are free.
pub fn cyclic_period(jobs: &[RefJob], roll_order: &[usize], train_order: &[usize]) -> f64 {
    let n_nodes = jobs.iter().flat_map(|j| j.nodes.iter().copied()).max().map_or(0, |m| m + 1);
    let mut node_free = vec![0.0f64; n_nodes];
    let mut train_free = 0.0f64;
    let mut ready = vec![0.0f64; jobs.len()];
    let mut history: Vec<Vec<f64>> = Vec::new();
    let cycles = 400;
    for _ in 0..cycles {
        let mut starts = vec![0.0; 2 * jobs.len()];
        let mut roll_end = vec![0.0; jobs.len()];
        for &j in roll_order {
            let s = jobs[j].nodes.iter().map(|&k| node_free[k]).fold(ready[j], f64::max);
            let e = s + jobs[j].roll;
            for &k in &jobs[j].nodes {
                node_free[k] = e;
            }
            starts[j] = s;
            roll_end[j] = e;
        }
        for &j in train_order {
            let s = roll_end[j].max(train_free);
            train_free = s + jobs[j].train;
            ready[j] = train_free;
            starts[jobs.len() + j] = s;
        }
        // periodic once the start pattern repeats up to a shift
        for (c, old) in history.iter().enumerate().rev() {
            let shift = starts[0] - old[0];
            if shift > 0.0 && starts.iter().zip(old).all(|(a, b)| ((a - b) - shift).abs() <= 1e-9 * a.abs().max(1.0)) {
                return shift / (history.len() - c) as f64;
            }
        }
        history.push(starts);
    }
    let first = &history[cycles / 2];
    let last = &history[cycles - 1];
    (last[0] - first[0]) / (cycles - 1 - cycles / 2) as f64
}

/// Shortest period over all per-pool orderings.
pub fn brute_force_min_period(jobs: &[RefJob]) -> f64 {
    let perms = permutations(jobs.len());
    let mut best = f64::INFINITY;
    for r in &perms {
        for t in &perms {
            best = best.min(cyclic_period(jobs, r, t));
        }
    }
    best
}

/// Change in `U_R + U_T` from running job `k` twice in a cycle prolonged by
/// its solo time.
pub fn repetition_delta(solos: &[f64], k: usize) -> f64 {
    let t1 = solos.iter().cloned().fold(0.0, f64::max);
    let total: f64 = solos.iter().sum();
    solos[k] * (t1 - total) / (t1 * (t1 + solos[k]))
}

/// Minimum over all set partitions of `n` items of the summed block costs;
/// `None` from `cost` marks an infeasible block.
pub fn min_partition_cost(n: usize, cost: &mut impl FnMut(&[usize]) -> Option<f64>) -> f64 {
    fn go(
        i: usize,
        n: usize,
        blocks: &mut Vec<Vec<usize>>,
        cost: &mut dyn FnMut(&[usize]) -> Option<f64>,
        memo: &mut BTreeMap<Vec<usize>, Option<f64>>,
        best: &mut f64,
    ) {
        if i == n {
            let mut total = 0.0;
            for b in blocks.iter() {
                let c = *memo.entry(b.clone()).or_insert_with(|| cost(b));
                match c {
                    Some(c) => total += c,
                    None => return,
                }
            }
            *best = best.min(total);
            return;
        }
        for b in 0..blocks.len() {
            blocks[b].push(i);
            go(i + 1, n, blocks, cost, memo, best);
            blocks[b].pop();
        }
        blocks.push(vec![i]);
        go(i + 1, n, blocks, cost, memo, best);
        blocks.pop();
    }
    let mut best = f64::INFINITY;
    go(0, n, &mut Vec::new(), cost, &mut BTreeMap::new(), &mut best);
    best
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
