mod run;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use coexec::simkit::{
    generate_trace, suite_rows, write_suite_csv, ArrivalModel, ExecMode, Mix, OptimalMode, SloMode, SuiteConfig,
};
use coexec::syncmodel::{self, gbps, Broadcast, SyncTopology};
use coexec::trace::{read_trace_file, write_trace_file};
use coexec::{ClusterConfig, JobSpec, PolicyKind, ReplayConfig};
use rayon::prelude::*;

use run::{audit_dir, execute, invariant_problems, Manifest};

#[derive(Debug, Parser)]
#[command(name = "coexec-sim", version, about = "Trace-driven experiments for co-execution group scheduling")]
struct Cli {
    /// Worker threads for independent replays
    #[arg(long, global = true, env = "ROLLMUX_SIM_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a JSON Lines job trace
    GenTrace(GenTraceArgs),
    /// Replay a trace under one or more policies
    Simulate(SimulateArgs),
    /// Run a predefined sweep of scenarios
    Sweep(SweepArgs),
    /// Compare flat and two-stage weight synchronization
    SyncModel(SyncArgs),
    /// Re-run a replay from its manifest and compare outputs
    Audit(AuditArgs),
}

#[derive(Debug, Args)]
struct GeneratorArgs {
    /// Workload profile: bl, rh, th or mixed
    #[arg(long, default_value = "mixed")]
    mix: Mix,
    /// Number of jobs
    #[arg(long, default_value_t = 300)]
    jobs: usize,
    /// SLO mode: a number, fixed:X, uniform or unif(A,B)
    #[arg(long, default_value = "uniform")]
    slo: SloMode,
    /// Arrivals: poisson, or batch:SECONDS for simultaneous jobs
    #[arg(long, default_value = "poisson")]
    arrival: String,
}

impl GeneratorArgs {
    fn arrival_model(&self) -> Result<ArrivalModel> {
        if self.arrival == "poisson" {
            return Ok(ArrivalModel::default());
        }
        if let Some(s) = self.arrival.strip_prefix("batch:") {
            let duration_s: f64 = s.parse().with_context(|| format!("bad batch duration `{s}`"))?;
            if !(duration_s > 0.0) {
                bail!("batch duration must be positive");
            }
            return Ok(ArrivalModel::Batch { duration_s });
        }
        bail!("unknown arrival model `{}` (expected poisson or batch:SECONDS)", self.arrival)
    }

    fn generate(&self, seed: u64) -> Result<Vec<JobSpec>> {
        Ok(generate_trace(self.jobs, self.mix, self.slo, &self.arrival_model()?, seed)?)
    }
}

#[derive(Debug, Args)]
struct GenTraceArgs {
    #[command(flatten)]
    gen: GeneratorArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SyncChoice {
    Off,
    Flat,
    Hierarchical,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Trace file; when absent a trace is generated from the generator flags
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    gen: GeneratorArgs,
    /// Policies, comma separated
    #[arg(long, value_delimiter = ',', default_value = "rollmux")]
    policy: Vec<PolicyKind>,
    /// Seeds, comma separated
    #[arg(long, value_delimiter = ',', default_value = "1")]
    seed: Vec<u64>,
    /// Cluster configuration JSON
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Sample response lengths over this many meta-iterations instead of worst case
    #[arg(long)]
    stochastic: Option<usize>,
    #[arg(long)]
    no_migration: bool,
    #[arg(long, default_value_t = 0.8)]
    migration_threshold: f64,
    /// Parameter synchronization delay between training and the next rollout
    #[arg(long, value_enum, default_value_t = SyncChoice::Off)]
    sync: SyncChoice,
    /// Lower-bound the offline optimum on large live sets instead of refusing
    #[arg(long)]
    windowed: bool,
    /// Leave decision latencies at zero so every output is byte-identical
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Sensitivity,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_enum, default_value_t = Suite::Sensitivity)]
    suite: Suite,
    #[arg(long, default_value_t = 300)]
    jobs: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Policies, comma separated
    #[arg(long, value_delimiter = ',', default_value = "rollmux,random,greedy,optimal")]
    policy: Vec<PolicyKind>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SyncArgs {
    #[arg(long, default_value_t = 14.0)]
    model_gb: f64,
    /// Training GPUs
    #[arg(long, default_value_t = 8)]
    n: u32,
    /// Rollout GPUs
    #[arg(long, default_value_t = 8)]
    r: u32,
    #[arg(long, default_value_t = 20.0)]
    cross_gbps: f64,
    #[arg(long, default_value_t = 400.0)]
    intra_gbps: f64,
    /// Fixed per-transfer overhead in seconds
    #[arg(long, default_value_t = 0.0)]
    overhead: f64,
    #[arg(long, default_value = "ring")]
    broadcast: String,
    /// Print JSON instead of text
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct AuditArgs {
    /// Run directories holding a manifest.json
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let res = match cli.command {
        Command::GenTrace(a) => gen_trace(a),
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::SyncModel(a) => sync_model(a),
        Command::Audit(a) => audit(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn gen_trace(a: GenTraceArgs) -> Result<ExitCode> {
    let jobs = a.gen.generate(a.seed)?;
    write_trace_file(&a.out, &jobs).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} jobs to {}", jobs.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn sync_topology(model_gb: f64, n: u32, r: u32, cross: f64, intra: f64, overhead: f64, broadcast: &str) -> Result<SyncTopology> {
    let broadcast = match broadcast {
        "ring" => Broadcast::Ring,
        "tree" => Broadcast::Tree,
        other => bail!("unknown broadcast `{other}` (expected ring or tree)"),
    };
    let t = SyncTopology {
        model_bytes: (model_gb * 1e9).round() as u64,
        train_gpus: n,
        rollout_gpus: r,
        cross_bw: gbps(cross),
        intra_bw: gbps(intra),
        per_stream_overhead: overhead,
        broadcast,
    };
    t.validate()?;
    Ok(t)
}

fn replay_config(a: &SimulateArgs) -> Result<ReplayConfig> {
    let mut cfg = ReplayConfig {
        timing: !a.no_timing,
        ..ReplayConfig::default()
    };
    if let Some(path) = &a.config {
        cfg.cluster = ClusterConfig::from_path(path).with_context(|| format!("loading {}", path.display()))?;
    }
    if let Some(cycles) = a.stochastic {
        cfg.mode = ExecMode::Stochastic { cycles };
    }
    if !(a.migration_threshold > 0.0 && a.migration_threshold <= 1.0) {
        bail!("migration threshold must lie in (0, 1]");
    }
    cfg.intra.migration.enabled = !a.no_migration;
    cfg.intra.migration.threshold = a.migration_threshold;
    let topo = SyncTopology::default();
    cfg.intra.handoff_s = match a.sync {
        SyncChoice::Off => 0.0,
        SyncChoice::Flat => syncmodel::flat_sync_time(&topo),
        SyncChoice::Hierarchical => syncmodel::hierarchical_sync_time(&topo),
    };
    if a.windowed {
        cfg.optimal_mode = OptimalMode::Windowed;
    }
    Ok(cfg)
}

fn simulate(a: SimulateArgs) -> Result<ExitCode> {
    let cfg = replay_config(&a)?;
    let mut manifests = Vec::new();
    for &seed in &a.seed {
        let (jobs, source) = match &a.trace {
            Some(path) => (
                read_trace_file(path).with_context(|| format!("reading {}", path.display()))?,
                path.display().to_string(),
            ),
            None => (
                a.gen.generate(seed)?,
                format!("generated: mix={} jobs={} slo={} arrival={}", a.gen.mix, a.gen.jobs, a.gen.slo, a.gen.arrival),
            ),
        };
        for &policy in &a.policy {
            manifests.push(Manifest::new(policy, seed, source.clone(), cfg.clone(), &jobs));
        }
    }
    let nested = manifests.len() > 1;
    let outcomes: Vec<_> = manifests
        .par_iter()
        .map(|m| {
            let dir = if nested {
                a.out_dir.join(format!("{}-s{}", m.policy, m.seed))
            } else {
                a.out_dir.clone()
            };
            execute(m, &dir)
        })
        .collect::<Result<_>>()?;

    let mut failed = false;
    for o in &outcomes {
        let s = &o.report.summary;
        println!(
            "{:<10} seed {:<4} cost ${:.2}  slo {:.1}%  peak ${:.2}/h  -> {}",
            s.policy.name(),
            s.seed,
            s.total_cost,
            s.slo_attainment * 100.0,
            s.peak_cost_per_h,
            o.dir.display()
        );
        for p in invariant_problems(&o.report) {
            failed = true;
            eprintln!("  {p}");
        }
    }
    if failed {
        eprintln!("error: invariant audit failed");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(a: SweepArgs) -> Result<ExitCode> {
    let Suite::Sensitivity = a.suite;
    let cfg = SuiteConfig {
        jobs: a.jobs,
        seed: a.seed,
        policies: a.policy.clone(),
        ..SuiteConfig::default()
    };
    let runs = coexec::simkit::run_suite(&cfg)?;
    let rows = suite_rows(&runs);
    fs::create_dir_all(&a.out_dir)?;
    let mut csv = Vec::new();
    write_suite_csv(&mut csv, &rows)?;
    fs::write(a.out_dir.join("sensitivity.csv"), csv)?;
    let mut m = serde_json::to_vec_pretty(&cfg)?;
    m.push(b'\n');
    fs::write(a.out_dir.join("manifest.json"), m)?;

    println!("{:<10} {:<10} {:<10} {:>10} {:>8}", "sweep", "setting", "policy", "norm_cost", "slo");
    for r in &rows {
        println!(
            "{:<10} {:<10} {:<10} {:>10.3} {:>7.1}%",
            r.sweep,
            r.setting,
            r.policy.name(),
            r.normalized_cost,
            r.slo_attainment * 100.0
        );
    }
    let dirty: Vec<_> = rows.iter().filter(|r| !r.audit_clean).collect();
    if !dirty.is_empty() {
        for r in dirty {
            eprintln!("audit failed: {} {} {}", r.sweep, r.setting, r.policy);
        }
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn sync_model(a: SyncArgs) -> Result<ExitCode> {
    let t = sync_topology(a.model_gb, a.n, a.r, a.cross_gbps, a.intra_gbps, a.overhead, &a.broadcast)?;
    let r = syncmodel::compare(&t)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        println!("flat:         {:.3} s ({} B over the cross link)", r.flat_s, r.flat_cross_bytes);
        println!("hierarchical: {:.3} s ({} B over the cross link)", r.hierarchical_s, r.hierarchical_cross_bytes);
        println!("speedup:      {:.3}x", r.speedup);
    }
    Ok(ExitCode::SUCCESS)
}

fn audit(a: AuditArgs) -> Result<ExitCode> {
    let results: Vec<_> = a.dirs.par_iter().map(|d| (d, audit_dir(d))).collect();
    let mut failed = false;
    for (dir, res) in results {
        match res {
            Ok(problems) if problems.is_empty() => println!("ok      {}", dir.display()),
            Ok(problems) => {
                failed = true;
                println!("FAILED  {}", dir.display());
                for p in problems {
                    println!("  {p}");
                }
            }
            Err(e) => {
                failed = true;
                println!("FAILED  {}: {e:#}", dir.display());
            }
        }
    }
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}
