//! Trial runners: OS threads on the wall clock, or a deterministic
//! single-threaded event loop on a virtual clock.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use doctxn::clock::{RealClock, SharedClock, Timestamp, VirtualClock};
use doctxn::lockmgr::Sweeper;
use doctxn::oracle::{self, History, WaitSample};
use doctxn::pipeline::{LogEvent, RunStep};
use doctxn::store::MemoryStore;
use doctxn::types::Operation;
use doctxn::workload::WorkloadGenerator;
use log::{debug, info, warn};

use crate::config::{mix, BenchConfig, Bound, TimeMode};
use crate::engine::{Active, Engine, Sample};
use crate::metrics::{Correctness, TrialMetrics};
use crate::report::MetricsReport;
use crate::BenchError;

const SWEEP_PERIOD: Duration = Duration::from_millis(1);
const WORKER_STREAM: u64 = 0x3017;

/// Everything one trial leaves behind.
#[derive(Debug)]
pub struct TrialRun {
    pub metrics: TrialMetrics,
    /// Measured samples, in completion order per client.
    pub samples: Vec<Sample>,
    pub events: Vec<LogEvent>,
    pub wait_samples: Vec<WaitSample>,
    /// The trial's store after the run.
    pub store: Arc<MemoryStore>,
}

/// Run every trial and aggregate. A failed oracle or audit marks the
/// report with `correctness_failure` but still returns it.
pub fn run_benchmark(config: &BenchConfig) -> Result<MetricsReport, BenchError> {
    let trials = run_trials(config, |_| Ok(()))?;
    Ok(MetricsReport::aggregate(config, trials))
}

/// Run every trial, handing each full [`TrialRun`] to `inspect` before
/// keeping only its metrics.
pub fn run_trials(
    config: &BenchConfig,
    mut inspect: impl FnMut(&TrialRun) -> Result<(), BenchError>,
) -> Result<Vec<TrialMetrics>, BenchError> {
    config.validate()?;
    let mut out = Vec::with_capacity(config.trials as usize);
    for t in 0..config.trials {
        let run = run_trial(config, t)?;
        info!(
            "trial {t} ({}): {} txns, {:.1} commits/s, abort rate {:.4}",
            config.mode.label(),
            run.metrics.transactions,
            run.metrics.throughput,
            run.metrics.abort_rate
        );
        inspect(&run)?;
        out.push(run.metrics);
    }
    Ok(out)
}

pub fn run_trial(config: &BenchConfig, trial: u32) -> Result<TrialRun, BenchError> {
    config.validate()?;
    let seed = config.trial_seed(trial);
    let raw = match config.time {
        TimeMode::Real => run_real(config, seed)?,
        TimeMode::Virtual => run_virtual(config, seed)?,
    };
    finish_trial(trial, seed, raw)
}

struct RawTrial {
    engine: Engine,
    samples: Vec<Sample>,
    wait_samples: Vec<WaitSample>,
    measure_start: Timestamp,
    expired: u64,
}

/// Hands out the measured transaction budget and decides when a client stops.
struct Admission {
    bound: Bound,
    warmup_end: Timestamp,
    tickets: AtomicU64,
}

impl Admission {
    /// `None` once the measured phase is over, otherwise whether the next
    /// transaction is measured.
    fn admit(&self, now: Timestamp) -> Option<bool> {
        if now < self.warmup_end {
            return Some(false);
        }
        match self.bound {
            Bound::Ops(n) => (self.tickets.fetch_add(1, Ordering::Relaxed) < n).then_some(true),
            Bound::Duration(d) => (now < self.warmup_end + d).then_some(true),
        }
    }
}

fn generator(
    config: &BenchConfig,
    seed: u64,
    client: usize,
) -> Result<WorkloadGenerator, BenchError> {
    Ok(WorkloadGenerator::for_worker(
        config.workload.clone(),
        mix(seed, WORKER_STREAM),
        client as u64,
    )?)
}

fn run_real(config: &BenchConfig, seed: u64) -> Result<RawTrial, BenchError> {
    let clock: SharedClock = Arc::new(RealClock::new());
    let engine = Engine::new(config, seed, clock.clone())?;
    let sweeper = engine
        .pipeline
        .as_ref()
        .map(|p| Sweeper::spawn(p.locks().clone(), SWEEP_PERIOD));
    let admission = Admission {
        bound: config.bound,
        warmup_end: clock.now() + config.warmup,
        tickets: AtomicU64::new(0),
    };
    let stop = AtomicBool::new(false);

    let (results, wait_samples) = std::thread::scope(|scope| {
        let sampler = engine.pipeline.as_ref().map(|p| {
            let locks = p.locks().clone();
            let (stop, clock) = (&stop, &clock);
            scope.spawn(move || {
                let mut out = Vec::new();
                while !stop.load(Ordering::Relaxed) {
                    out.push(WaitSample {
                        at: clock.now(),
                        graph: locks.wait_graph_snapshot(),
                    });
                    std::thread::sleep(config.sample_interval);
                }
                out
            })
        });
        let workers: Vec<_> = (0..config.clients)
            .map(|c| {
                let (engine, admission) = (&engine, &admission);
                scope.spawn(move || -> Result<Vec<Sample>, BenchError> {
                    let mut gen = generator(config, seed, c)?;
                    let mut mine = Vec::new();
                    while let Some(measured) = admission.admit(engine.clock.now()) {
                        let ops = gen.next_transaction();
                        loop {
                            let s = engine.run_blocking(ops.clone())?;
                            let done = !config.resubmit || s.committed();
                            if measured {
                                mine.push(s);
                            }
                            if done {
                                break;
                            }
                        }
                    }
                    Ok(mine)
                })
            })
            .collect();
        let results: Vec<_> = workers
            .into_iter()
            .map(|h| h.join().map_err(|_| BenchError::WorkerPanic))
            .collect();
        stop.store(true, Ordering::Relaxed);
        let waits = sampler
            .map(|h| h.join().unwrap_or_default())
            .unwrap_or_default();
        (results, waits)
    });

    let mut samples = Vec::new();
    for r in results {
        samples.extend(r??);
    }
    let expired = sweeper.map_or(0, Sweeper::stop);
    Ok(RawTrial {
        engine,
        samples,
        wait_samples,
        measure_start: admission.warmup_end,
        expired,
    })
}

struct Client {
    gen: WorkloadGenerator,
    active: Option<(Active, Vec<Operation>, bool)>,
}

fn run_virtual(config: &BenchConfig, seed: u64) -> Result<RawTrial, BenchError> {
    let vclock = VirtualClock::new();
    let clock: SharedClock = Arc::new(vclock.clone());
    let engine = Engine::new(config, seed, clock.clone())?;
    let admission = Admission {
        bound: config.bound,
        warmup_end: clock.now() + config.warmup,
        tickets: AtomicU64::new(0),
    };
    let mut clients = (0..config.clients)
        .map(|c| {
            Ok(Client {
                gen: generator(config, seed, c)?,
                active: None,
            })
        })
        .collect::<Result<Vec<_>, BenchError>>()?;

    let mut queue: BinaryHeap<Reverse<(Timestamp, u64, usize)>> = BinaryHeap::new();
    let mut seq = 0u64;
    for c in 0..clients.len() {
        queue.push(Reverse((clock.now(), seq, c)));
        seq += 1;
    }
    let locks = engine.pipeline.as_ref().map(|p| p.locks().clone());
    let mut samples = Vec::new();
    let mut wait_samples = Vec::new();
    let mut next_sample = clock.now();
    let mut expired = 0u64;

    while let Some(Reverse((t, _, c))) = queue.pop() {
        if let Some(locks) = &locks {
            while next_sample <= t {
                vclock.advance_to(next_sample);
                expired += locks.expire_deadlines(next_sample).len() as u64;
                wait_samples.push(WaitSample {
                    at: next_sample,
                    graph: locks.wait_graph_snapshot(),
                });
                next_sample = next_sample + config.sample_interval;
            }
        }
        vclock.advance_to(t);
        let now = clock.now();
        if let Some(locks) = &locks {
            expired += locks.expire_deadlines(now).len() as u64;
        }

        let client = &mut clients[c];
        if client.active.is_none() {
            let Some(measured) = admission.admit(now) else {
                continue;
            };
            let ops = client.gen.next_transaction();
            client.active = Some((engine.start(ops.clone())?, ops, measured));
        }
        let (active, ops, measured) = client.active.as_mut().expect("active transaction");
        match engine.poll(active)? {
            RunStep::WaitUntil(w) => {
                queue.push(Reverse((w.max(now), seq, c)));
            }
            RunStep::Done(_) => {
                let measured = *measured;
                let ops = std::mem::take(ops);
                let (active, _, _) = client.active.take().expect("active transaction");
                let s = engine.sample(active);
                let again = config.resubmit && !s.committed();
                if measured {
                    samples.push(s);
                }
                if again {
                    client.active = Some((engine.start(ops.clone())?, ops, measured));
                }
                queue.push(Reverse((now, seq, c)));
            }
        }
        seq += 1;
    }
    Ok(RawTrial {
        engine,
        samples,
        wait_samples,
        measure_start: admission.warmup_end,
        expired,
    })
}

fn check_correctness(engine: &Engine, events: &[LogEvent]) -> Result<Correctness, BenchError> {
    let history = History::from_log(events)?;
    let exclusion = engine
        .pipeline
        .as_ref()
        .and_then(|p| p.locks().audit())
        .and_then(|a| a.check_mutual_exclusion().err())
        .map(|e| e.to_string());
    Ok(Correctness {
        verdict: oracle::verdict(&history),
        s2pl_violation: oracle::audit_strict_2pl(events)
            .err()
            .map(|e| e.to_string()),
        state_violation: oracle::audit_state_machine(events)
            .err()
            .map(|e| e.to_string()),
        exclusion_violation: exclusion,
        events: events.len() as u64,
    })
}

fn finish_trial(trial: u32, seed: u64, raw: RawTrial) -> Result<TrialRun, BenchError> {
    let RawTrial {
        engine,
        samples,
        wait_samples,
        measure_start,
        expired,
    } = raw;
    if let Some(early) = samples.iter().find(|s| s.started < measure_start) {
        return Err(BenchError::Config(format!(
            "sample started at {:?}, before the end of warmup at {:?}",
            early.started, measure_start
        )));
    }
    let end = samples
        .iter()
        .map(|s| s.finished)
        .max()
        .unwrap_or(measure_start);
    let mut metrics =
        TrialMetrics::from_samples(trial, seed, &samples, end.saturating_since(measure_start));
    metrics.expired_grants = expired;
    metrics.lock_table_empty = engine.is_quiescent();
    if !metrics.lock_table_empty {
        warn!("trial {trial}: lock table not empty after the run");
    }
    let events = engine.events.as_ref().map(|l| l.take()).unwrap_or_default();
    if let Some(p) = &engine.pipeline {
        metrics.lock_stats = Some(p.locks().stats());
        metrics.deadlock_count =
            oracle::persistent_cycles(&wait_samples, p.config().lock_timeout).len() as u64;
        if engine.events.is_some() {
            let c = check_correctness(&engine, &events)?;
            if !c.passed() {
                warn!("trial {trial}: correctness check failed: {c:?}");
            }
            metrics.correctness = Some(c);
        }
    }
    debug!("trial {trial}: {} wait-graph samples", wait_samples.len());
    Ok(TrialRun {
        metrics,
        samples,
        events,
        wait_samples,
        store: engine.store.clone(),
    })
}
