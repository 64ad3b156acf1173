//! Command-line front end. `main` maps the returned status to the exit code.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use doctxn::oracle::{self, History};
use doctxn::pipeline::events::{read_jsonl, write_jsonl};
use doctxn::pipeline::HybridReadLocks;
use doctxn::store::LatencyProfile;
use doctxn::workload::{OpsPerTransaction, Properties, WorkloadName, WorkloadSpec};

use crate::config::{BenchConfig, Bound, Mode, TimeMode};
use crate::report::{write_sweep_csv, MetricsReport, ReportFormat};
use crate::run::{run_trials, TrialRun};
use crate::sweep::{sweep, SweepParam};
use crate::BenchError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CORRECTNESS_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "bench",
    about = "Benchmark and verify the doctxn transaction pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one configuration for the requested number of trials.
    Run(RunArgs),
    /// Run one configuration per value of a pipeline parameter.
    Sweep(SweepArgs),
    /// Check a recorded event log for conflict serializability.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// a, b, f, or the path of a workload properties file.
    #[arg(long, default_value = "a")]
    pub workload: String,
    #[arg(long, default_value_t = 1)]
    pub clients: usize,
    /// Measured transactions per trial.
    #[arg(long, conflicts_with = "duration_ms")]
    pub ops: Option<u64>,
    /// Length of the measured phase instead of an op count.
    #[arg(long)]
    pub duration_ms: Option<u64>,
    #[arg(long, default_value_t = 2000)]
    pub warmup_ms: u64,
    /// framework, no-stage3 or raw.
    #[arg(long, default_value = "framework")]
    pub mode: Mode,
    #[arg(long, default_value_t = 100)]
    pub lock_timeout_ms: u64,
    #[arg(long, default_value_t = 10)]
    pub initial_backoff_ms: u64,
    #[arg(long, default_value_t = 500)]
    pub max_backoff_ms: u64,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    #[arg(long, default_value_t = 5)]
    pub trials: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Override the workload's record count.
    #[arg(long)]
    pub records: Option<u64>,
    /// Operations per transaction: `k` or `min-max`.
    #[arg(long)]
    pub ops_per_txn: Option<OpsPerTransaction>,
    /// Shared locks on the read-only documents of mixed transactions.
    #[arg(long)]
    pub hybrid_read_locks: bool,
    /// Simulated store read latency in microseconds.
    #[arg(long, default_value_t = 0)]
    pub read_latency_us: u64,
    /// Simulated store write latency in microseconds.
    #[arg(long, default_value_t = 0)]
    pub write_latency_us: u64,
    /// Re-submit failed transactions until they commit.
    #[arg(long)]
    pub resubmit: bool,
    /// Skip event capture and the serializability check.
    #[arg(long)]
    pub no_history: bool,
    /// Simulate clients on a virtual clock.
    #[arg(long)]
    pub virtual_time: bool,
    /// Report path (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Write the event log as JSON lines. With several trials, one file
    /// per trial with the trial number before the extension.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Write the final store contents of the last trial as NDJSON.
    #[arg(long)]
    pub dump_store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// lock-timeout, initial-backoff, max-backoff or max-retries.
    #[arg(long)]
    pub param: SweepParam,
    /// Comma-separated values (milliseconds, or a retry count).
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Event log in JSON lines.
    #[arg(long)]
    pub history: PathBuf,
}

fn workload_spec(arg: &str) -> Result<WorkloadSpec, BenchError> {
    match arg.parse::<WorkloadName>() {
        Ok(WorkloadName::Custom) | Err(_) => Ok(Properties::from_file(arg)?.spec),
        Ok(name) => Ok(WorkloadSpec::named(name)),
    }
}

impl CommonArgs {
    pub fn config(&self) -> Result<BenchConfig, BenchError> {
        let mut workload = workload_spec(&self.workload)?;
        if let Some(n) = self.records {
            workload = workload.with_records(n);
        }
        if let Some(k) = self.ops_per_txn {
            workload = workload.with_ops(k);
        }
        let mut config = BenchConfig {
            workload,
            clients: self.clients,
            warmup: Duration::from_millis(self.warmup_ms),
            trials: self.trials,
            seed: self.seed,
            mode: self.mode,
            time: if self.virtual_time {
                TimeMode::Virtual
            } else {
                TimeMode::Real
            },
            store_latency: LatencyProfile::fixed(
                Duration::from_micros(self.read_latency_us),
                Duration::from_micros(self.write_latency_us),
            ),
            resubmit: self.resubmit,
            capture_history: !self.no_history,
            ..BenchConfig::default()
        };
        config.bound = match (self.ops, self.duration_ms) {
            (_, Some(ms)) => Bound::Duration(Duration::from_millis(ms)),
            (Some(n), None) => Bound::Ops(n),
            (None, None) => config.bound,
        };
        let p = &mut config.pipeline;
        p.lock_timeout = Duration::from_millis(self.lock_timeout_ms);
        p.backoff.initial = Duration::from_millis(self.initial_backoff_ms);
        p.backoff.max = Duration::from_millis(self.max_backoff_ms);
        p.max_retries = self.max_retries;
        if self.hybrid_read_locks {
            p.hybrid_read_locks = HybridReadLocks::Shared;
        }
        config.validate()?;
        Ok(config)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, BenchError> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| BenchError::io(path, e))?,
    ))
}

fn trial_path(base: &Path, trial: u32, trials: u32) -> PathBuf {
    if trials == 1 {
        return base.to_path_buf();
    }
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}.{trial}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{trial}"),
    };
    base.with_file_name(name)
}

fn write_events(run: &TrialRun, path: &Path) -> Result<(), BenchError> {
    let mut w = create(path)?;
    write_jsonl(&run.events, &mut w)?;
    w.flush().map_err(|e| BenchError::io(path, e))
}

fn dump_store(run: &TrialRun, path: &Path) -> Result<(), BenchError> {
    let mut w = create(path)?;
    run.store.dump_ndjson(&mut w)?;
    w.flush().map_err(|e| BenchError::io(path, e))
}

fn run(args: &RunArgs) -> Result<i32, BenchError> {
    let config = args.common.config()?;
    let trials = run_trials(&config, |run| {
        if let Some(p) = &args.events {
            write_events(run, &trial_path(p, run.metrics.trial, config.trials))?;
        }
        if let Some(p) = &args.dump_store {
            if run.metrics.trial + 1 == config.trials {
                dump_store(run, p)?;
            }
        }
        Ok(())
    })?;
    let report = MetricsReport::aggregate(&config, trials);
    match &args.common.out {
        Some(p) => report.emit(ReportFormat::Json, p)?,
        None => println!("{}", report.to_json()?),
    }
    if let Some(p) = &args.common.csv {
        report.emit(ReportFormat::Csv, p)?;
    }
    if report.correctness_failure {
        eprintln!("CORRECTNESS_FAILURE");
        return Ok(EXIT_CORRECTNESS_FAILURE);
    }
    Ok(EXIT_OK)
}

#[derive(serde::Serialize)]
struct SweepPoint<'a> {
    param: SweepParam,
    value: u64,
    report: &'a MetricsReport,
}

fn run_sweep(args: &SweepArgs) -> Result<i32, BenchError> {
    let config = args.common.config()?;
    let points = sweep(&config, args.param, &args.values)?;
    let json: Vec<SweepPoint> = points
        .iter()
        .map(|(v, r)| SweepPoint {
            param: args.param,
            value: *v,
            report: r,
        })
        .collect();
    match &args.common.out {
        Some(p) => {
            let mut w = create(p)?;
            serde_json::to_writer_pretty(&mut w, &json)?;
            w.flush().map_err(|e| BenchError::io(p, e))?;
        }
        None => println!("{}", serde_json::to_string_pretty(&json)?),
    }
    if let Some(p) = &args.common.csv {
        let mut w = create(p)?;
        write_sweep_csv(&points, &mut w)?;
        w.flush().map_err(|e| BenchError::io(p, e))?;
    }
    if points.iter().any(|(_, r)| r.correctness_failure) {
        eprintln!("CORRECTNESS_FAILURE");
        return Ok(EXIT_CORRECTNESS_FAILURE);
    }
    Ok(EXIT_OK)
}

fn verify(args: &VerifyArgs) -> Result<i32, BenchError> {
    let f = File::open(&args.history).map_err(|e| BenchError::io(&args.history, e))?;
    let events = read_jsonl(BufReader::new(f))?;
    let verdict = oracle::verdict(&History::from_log(&events)?);
    println!("{}", serde_json::to_string(&verdict)?);
    Ok(if verdict.serializable {
        EXIT_OK
    } else {
        EXIT_CORRECTNESS_FAILURE
    })
}

/// Parse `args` and run the command. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_ERROR,
            };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Verify(a) => verify(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        EXIT_ERROR
    })
}
