//! JSON Lines trace files, one job per line.
//!
//! ```text
//! {"id":0,"arrival_s":0.0,"duration_s":36000.0,"roll_s":100.0,"train_s":50.0,
//!  "roll_gpus":8,"train_gpus":8,"roll_mem_gb":113.4,"train_mem_gb":156.2,
//!  "slo":1.5,"max_tokens":8192,"tail":{"family":"lognormal","mu":7.7,"sigma":0.8}}
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{JobId, JobSpec, LengthDistribution, PhaseProfile, TailFamily};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRecord {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub id: u64,
    pub arrival_s: f64,
    pub duration_s: f64,
    pub roll_s: f64,
    pub train_s: f64,
    pub roll_gpus: u32,
    pub train_gpus: u32,
    pub roll_mem_gb: f64,
    pub train_mem_gb: f64,
    pub slo: f64,
    pub max_tokens: u32,
    pub tail: TailRecord,
}

impl TraceRecord {
    pub fn into_job(self) -> std::result::Result<JobSpec, String> {
        let family = match self.tail.family.as_str() {
            "lognormal" | "lognormal-truncated" => TailFamily::Lognormal {
                mu: self.tail.mu.ok_or("lognormal tail needs `mu`")?,
                sigma: self.tail.sigma.ok_or("lognormal tail needs `sigma`")?,
            },
            "empirical" => TailFamily::Empirical {
                samples: self.tail.samples.ok_or("empirical tail needs `samples`")?,
            },
            other => return Err(format!("unknown tail family `{other}`")),
        };
        let job = JobSpec {
            id: JobId(self.id),
            arrival: self.arrival_s,
            duration: self.duration_s,
            rollout: PhaseProfile::new(self.roll_s, self.roll_mem_gb, self.roll_gpus),
            train: PhaseProfile::new(self.train_s, self.train_mem_gb, self.train_gpus),
            slo: self.slo,
            tail: LengthDistribution {
                family,
                cap: self.max_tokens,
            },
            max_tokens: self.max_tokens,
        };
        job.validate().map_err(|e| e.to_string())?;
        Ok(job)
    }
}

impl From<&JobSpec> for TraceRecord {
    fn from(j: &JobSpec) -> Self {
        let tail = match &j.tail.family {
            TailFamily::Lognormal { mu, sigma } => TailRecord {
                family: "lognormal".into(),
                mu: Some(*mu),
                sigma: Some(*sigma),
                samples: None,
            },
            TailFamily::Empirical { samples } => TailRecord {
                family: "empirical".into(),
                mu: None,
                sigma: None,
                samples: Some(samples.clone()),
            },
        };
        Self {
            id: j.id.0,
            arrival_s: j.arrival,
            duration_s: j.duration,
            roll_s: j.rollout.worst_case_duration,
            train_s: j.train.worst_case_duration,
            roll_gpus: j.rollout.gpus_required,
            train_gpus: j.train.gpus_required,
            roll_mem_gb: j.rollout.mem_footprint,
            train_mem_gb: j.train.mem_footprint,
            slo: j.slo,
            max_tokens: j.max_tokens,
            tail,
        }
    }
}

/// Parses a trace; blank lines are skipped, errors carry 1-based line numbers.
pub fn read_trace<R: Read>(reader: R) -> Result<Vec<JobSpec>> {
    let mut jobs = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| Error::TraceLine {
            line: lineno,
            reason: e.to_string(),
        })?;
        let job = rec.into_job().map_err(|reason| Error::TraceLine {
            line: lineno,
            reason,
        })?;
        jobs.push(job);
    }
    Ok(jobs)
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<Vec<JobSpec>> {
    read_trace(std::fs::File::open(path)?)
}

pub fn write_trace<W: Write>(mut w: W, jobs: &[JobSpec]) -> Result<()> {
    for j in jobs {
        serde_json::to_writer(&mut w, &TraceRecord::from(j))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_trace_file(path: impl AsRef<Path>, jobs: &[JobSpec]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trace(&mut f, jobs)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"id":3,"arrival_s":10.0,"duration_s":3600.0,"roll_s":100.0,"train_s":50.0,"roll_gpus":8,"train_gpus":8,"roll_mem_gb":113.4,"train_mem_gb":156.2,"slo":1.5,"max_tokens":8192,"tail":{"family":"lognormal","mu":7.7,"sigma":0.8}}"#;

    #[test]
    fn parses_documented_fields() {
        let jobs = read_trace(LINE.as_bytes()).unwrap();
        assert_eq!(jobs.len(), 1);
        let j = &jobs[0];
        assert_eq!(j.id, JobId(3));
        assert_eq!(j.solo_time(), 150.0);
        assert_eq!(j.tail.cap, 8192);
        let mut out = Vec::new();
        write_trace(&mut out, &jobs).unwrap();
        assert_eq!(read_trace(out.as_slice()).unwrap(), jobs);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{LINE}\n\n{{\"id\": 4}}\n");
        match read_trace(text.as_bytes()) {
            Err(Error::TraceLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_job_reports_line_number() {
        let bad = LINE.replace("\"slo\":1.5", "\"slo\":0.5");
        match read_trace(bad.as_bytes()) {
            Err(Error::TraceLine { line, reason }) => {
                assert_eq!(line, 1);
                assert!(reason.contains("slo"));
            }
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn generated_trace_round_trips_exactly() {
        use crate::simkit::{generate_trace, ArrivalModel, Mix, SloMode};
        let jobs = generate_trace(200, Mix::Mixed, SloMode::default(), &ArrivalModel::default(), 17).unwrap();
        let mut out = Vec::new();
        write_trace(&mut out, &jobs).unwrap();
        assert_eq!(read_trace(out.as_slice()).unwrap(), jobs);
    }
}
