use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use coexec::simkit::{write_decisions_jsonl, write_timeseries_csv};
use coexec::trace::TraceRecord;
use coexec::{replay, JobSpec, PolicyKind, ReplayConfig, SimReport};
use serde::{Deserialize, Serialize};

pub const MANIFEST_SCHEMA: &str = "coexec-manifest/v1";

/// Everything needed to repeat one replay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub tool_version: String,
    pub policy: PolicyKind,
    pub seed: u64,
    /// Where the trace came from; informational only.
    pub source: String,
    pub replay: ReplayConfig,
    pub trace: Vec<TraceRecord>,
}

impl Manifest {
    pub fn new(policy: PolicyKind, seed: u64, source: String, replay: ReplayConfig, trace: &[JobSpec]) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            policy,
            seed,
            source,
            replay,
            trace: trace.iter().map(TraceRecord::from).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if m.schema != MANIFEST_SCHEMA {
            bail!("{}: unsupported manifest schema `{}`", path.display(), m.schema);
        }
        Ok(m)
    }

    pub fn jobs(&self) -> Result<Vec<JobSpec>> {
        self.trace
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, r)| r.into_job().map_err(|e| anyhow::anyhow!("manifest trace entry {}: {e}", i + 1)))
            .collect()
    }
}

/// Serialized run outputs, keyed by file name.
pub struct Artifacts {
    pub summary: Vec<u8>,
    pub timeseries: Vec<u8>,
    pub decisions: Vec<u8>,
}

impl Artifacts {
    pub fn render(report: &SimReport) -> Result<Self> {
        let mut summary = serde_json::to_vec_pretty(&report.summary)?;
        summary.push(b'\n');
        let mut timeseries = Vec::new();
        write_timeseries_csv(&mut timeseries, &report.timeseries)?;
        let mut decisions = Vec::new();
        write_decisions_jsonl(&mut decisions, &report.decisions)?;
        Ok(Self {
            summary,
            timeseries,
            decisions,
        })
    }

    pub fn files(&self) -> [(&'static str, &[u8]); 3] {
        [
            ("summary.json", &self.summary),
            ("timeseries.csv", &self.timeseries),
            ("decisions.jsonl", &self.decisions),
        ]
    }
}

pub struct RunOutcome {
    pub dir: PathBuf,
    pub report: SimReport,
}

pub fn execute(manifest: &Manifest, dir: &Path) -> Result<RunOutcome> {
    let jobs = manifest.jobs()?;
    let report = replay(&jobs, manifest.policy, &manifest.replay, manifest.seed)?;
    let art = Artifacts::render(&report)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, bytes) in art.files() {
        fs::write(dir.join(name), bytes).with_context(|| format!("writing {name}"))?;
    }
    let mut m = serde_json::to_vec_pretty(manifest)?;
    m.push(b'\n');
    fs::write(dir.join("manifest.json"), m)?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        report,
    })
}

/// Differences between a fresh replay of `dir/manifest.json` and the files
/// stored next to it, followed by any invariant violations.
pub fn audit_dir(dir: &Path) -> Result<Vec<String>> {
    let manifest = Manifest::load(&dir.join("manifest.json"))?;
    let jobs = manifest.jobs()?;
    let report = replay(&jobs, manifest.policy, &manifest.replay, manifest.seed)?;
    let fresh = Artifacts::render(&report)?;
    let mut problems = Vec::new();
    for (name, bytes) in fresh.files() {
        if name == "decisions.jsonl" && manifest.replay.timing {
            // wall-clock latencies differ between runs
            continue;
        }
        let path = dir.join(name);
        match fs::read(&path) {
            Ok(stored) if stored == bytes => {}
            Ok(_) => problems.push(format!("{name} differs from a fresh replay")),
            Err(e) => problems.push(format!("{name}: {e}")),
        }
    }
    problems.extend(invariant_problems(&report));
    Ok(problems)
}

pub fn invariant_problems(report: &SimReport) -> Vec<String> {
    let a = &report.summary.audit;
    if a.is_clean() {
        return Vec::new();
    }
    let mut out = vec![format!(
        "audit: {} residency violations, {} SLO violations, {} leaked nodes, cost gap {:.3e}",
        a.residency_violations, a.slo_violations, a.leaked_nodes, a.cost_relative_gap
    )];
    out.extend(a.messages.iter().cloned());
    out
}
