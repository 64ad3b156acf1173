//! One trial's execution machinery: the store, the pipeline (unless in raw
//! mode) and the per-transaction step machines the runners poll.

use std::sync::Arc;
use std::time::Duration;

use doctxn::clock::{SharedClock, Timestamp};
use doctxn::lockmgr::LockManager;
use doctxn::pipeline::{
    EventLog, ExecutionResult, FailureReason, Pipeline, RunStep, StageTimings, TransactionRequest,
    TxnRun,
};
use doctxn::store::{DocumentStore, MemoryStore, WriteOutcome};
use doctxn::types::{OpKind, Operation, TransactionType};
use doctxn::workload::load_phase;
use serde::{Deserialize, Serialize};

use crate::config::{mix, BenchConfig, Mode};
use crate::BenchError;

/// Latency class of a transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    Read,
    Update,
}

impl OpClass {
    pub fn of(ops: &[Operation]) -> Self {
        if ops.iter().any(|op| op.kind().is_write()) {
            OpClass::Update
        } else {
            OpClass::Read
        }
    }
}

/// Measurements of one submitted transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub class: OpClass,
    pub started: Timestamp,
    pub finished: Timestamp,
    pub result: ExecutionResult,
    pub retries: u32,
    pub saw_conflict: bool,
    pub lock_wait: Duration,
    pub timings: StageTimings,
}

impl Sample {
    pub fn latency(&self) -> Duration {
        self.finished - self.started
    }

    pub fn committed(&self) -> bool {
        self.result == ExecutionResult::Success
    }
}

#[derive(Debug, Clone)]
enum Pending {
    Read,
    Write(Operation),
    RmwRead,
}

/// A transaction applied straight to the store with no locking. A
/// read-modify-write becomes a read, a delay, and a write of the image
/// computed from that read, so concurrent increments can be lost.
#[derive(Debug, Clone)]
pub struct RawRun {
    ops: Vec<Operation>,
    next: usize,
    pending: Option<(Timestamp, Pending)>,
    started: Timestamp,
    finished: Option<Timestamp>,
    result: Option<ExecutionResult>,
}

impl RawRun {
    pub fn new(ops: Vec<Operation>, now: Timestamp) -> Self {
        RawRun {
            ops,
            next: 0,
            pending: None,
            started: now,
            finished: None,
            result: None,
        }
    }

    pub fn poll(
        &mut self,
        store: &dyn DocumentStore,
        now: Timestamp,
    ) -> Result<RunStep, BenchError> {
        if let Some(r) = self.result {
            return Ok(RunStep::Done(r));
        }
        loop {
            if let Some((due, _)) = &self.pending {
                if now < *due {
                    return Ok(RunStep::WaitUntil(*due));
                }
                let (_, p) = self.pending.take().expect("pending step");
                let ok = match p {
                    Pending::Read => {
                        store.read(self.ops[self.next].doc());
                        self.next += 1;
                        true
                    }
                    Pending::Write(op) => {
                        self.next += 1;
                        store.write(&op)? == WriteOutcome::Applied
                    }
                    Pending::RmwRead => {
                        let op = &self.ops[self.next];
                        let image = store
                            .read(op.doc())
                            .and_then(|d| op.modify().and_then(|m| m.apply(&d.fields).ok()));
                        match image {
                            Some(fields) => {
                                let write = Operation::update(op.doc().clone(), fields)
                                    .map_err(doctxn::pipeline::PipelineError::from)?;
                                self.pending =
                                    Some((now + store.write_delay(), Pending::Write(write)));
                                continue;
                            }
                            None => {
                                self.next += 1;
                                false
                            }
                        }
                    }
                };
                if !ok {
                    return Ok(self.finish(
                        ExecutionResult::Failure(FailureReason::ConstraintViolation),
                        now,
                    ));
                }
                continue;
            }
            let Some(op) = self.ops.get(self.next) else {
                return Ok(self.finish(ExecutionResult::Success, now));
            };
            let (delay, step) = match op.kind() {
                OpKind::Read => (store.read_delay(), Pending::Read),
                OpKind::ReadModifyWrite => (store.read_delay(), Pending::RmwRead),
                _ => (store.write_delay(), Pending::Write(op.clone())),
            };
            self.pending = Some((now + delay, step));
        }
    }

    fn finish(&mut self, result: ExecutionResult, now: Timestamp) -> RunStep {
        self.result = Some(result);
        self.finished = Some(now);
        RunStep::Done(result)
    }

    fn sample(self) -> Sample {
        let finished = self.finished.unwrap_or(self.started);
        Sample {
            class: OpClass::of(&self.ops),
            started: self.started,
            finished,
            result: self.result.unwrap_or(ExecutionResult::RetryScheduled),
            retries: 0,
            saw_conflict: false,
            lock_wait: Duration::ZERO,
            timings: StageTimings {
                execute: finished - self.started,
                ..Default::default()
            },
        }
    }
}

/// A transaction in flight under either mode.
#[derive(Debug, Clone)]
pub enum Active {
    Pipeline(Box<TxnRun>),
    Raw(RawRun),
}

/// Store, pipeline and clock for one trial.
pub struct Engine {
    pub mode: Mode,
    pub store: Arc<MemoryStore>,
    pub pipeline: Option<Arc<Pipeline>>,
    pub events: Option<Arc<EventLog>>,
    pub clock: SharedClock,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("mode", &self.mode).finish()
    }
}

impl Engine {
    /// Build and load a fresh store, and a pipeline unless in raw mode.
    pub fn new(
        config: &BenchConfig,
        trial_seed: u64,
        clock: SharedClock,
    ) -> Result<Self, BenchError> {
        let latency = config.store_latency.with_seed(mix(trial_seed, 0x5707e));
        let store = Arc::new(MemoryStore::with_latency(latency, clock.clone()));
        load_phase(&config.workload, &*store, trial_seed)?;
        let (pipeline, events) = if config.mode == Mode::RawStore {
            (None, None)
        } else {
            let pc = config.pipeline_for(trial_seed);
            let mut locks = LockManager::new(clock.clone()).with_default_timeout(pc.lock_timeout);
            if config.capture_history {
                locks = locks.with_audit();
            }
            let mut p =
                Pipeline::new(pc, store.clone(), clock.clone())?.with_lock_manager(Arc::new(locks));
            let events = config
                .capture_history
                .then(|| Arc::new(EventLog::new(clock.clone())));
            if let Some(log) = &events {
                p = p.with_event_log(log.clone());
            }
            (Some(Arc::new(p)), events)
        };
        Ok(Engine {
            mode: config.mode,
            store,
            pipeline,
            events,
            clock,
        })
    }

    pub fn start(&self, ops: Vec<Operation>) -> Result<Active, BenchError> {
        Ok(match &self.pipeline {
            Some(p) => Active::Pipeline(Box::new(p.start(TransactionRequest::new(ops))?)),
            None => Active::Raw(RawRun::new(ops, self.clock.now())),
        })
    }

    pub fn poll(&self, active: &mut Active) -> Result<RunStep, BenchError> {
        match active {
            Active::Pipeline(run) => {
                Ok(self.pipeline.as_ref().expect("pipeline mode").poll(run)?)
            }
            Active::Raw(run) => run.poll(&*self.store, self.clock.now()),
        }
    }

    /// Poll to completion, sleeping on the clock in between.
    pub fn run_blocking(&self, ops: Vec<Operation>) -> Result<Sample, BenchError> {
        let mut active = self.start(ops)?;
        loop {
            match self.poll(&mut active)? {
                RunStep::WaitUntil(t) => self.clock.sleep_until(t),
                RunStep::Done(_) => return Ok(self.sample(active)),
            }
        }
    }

    pub fn sample(&self, active: Active) -> Sample {
        match active {
            Active::Raw(run) => run.sample(),
            Active::Pipeline(run) => {
                let o = run.into_outcome();
                Sample {
                    class: match o.context.txn_type() {
                        Some(TransactionType::Read) => OpClass::Read,
                        _ => OpClass::Update,
                    },
                    started: o.started,
                    finished: o.finished,
                    result: o.result,
                    retries: o.context.retry_count(),
                    saw_conflict: o.saw_conflict,
                    lock_wait: o.lock_wait,
                    timings: o.timings,
                }
            }
        }
    }

    /// No lock entries, registered transactions or queued retries remain.
    pub fn is_quiescent(&self) -> bool {
        self.pipeline.as_ref().is_none_or(|p| {
            p.locks().is_empty() && p.active_count() == 0 && p.retry_queue().is_empty()
        })
    }
}

#[cfg(test)]
mod tests {
    use doctxn::clock::{Clock, VirtualClock};
    use doctxn::store::LatencyProfile;
    use doctxn::types::Modify;
    use doctxn::workload::{key_for, WorkloadSpec};

    use super::*;

    fn raw_engine() -> (VirtualClock, Engine) {
        let clock = VirtualClock::new();
        let config = BenchConfig {
            workload: WorkloadSpec::f().with_records(1),
            mode: Mode::RawStore,
            store_latency: LatencyProfile::fixed(
                Duration::from_millis(1),
                Duration::from_millis(1),
            ),
            ..BenchConfig::default()
        };
        let engine = Engine::new(&config, 1, Arc::new(clock.clone())).unwrap();
        (clock, engine)
    }

    fn increment() -> Vec<Operation> {
        vec![Operation::read_modify_write(
            key_for(0),
            Modify::Increment {
                field: "counter".into(),
                delta: 1,
            },
        )]
    }

    #[test]
    fn overlapping_raw_increments_lose_one() {
        let (clock, engine) = raw_engine();
        let (mut a, mut b) = (
            engine.start(increment()).unwrap(),
            engine.start(increment()).unwrap(),
        );
        // both read at 1 ms, both write at 2 ms
        for t in [0, 1, 2] {
            clock.advance_to(Timestamp::from_millis(t));
            engine.poll(&mut a).unwrap();
            engine.poll(&mut b).unwrap();
        }
        assert_eq!(
            engine.poll(&mut a).unwrap(),
            RunStep::Done(ExecutionResult::Success)
        );
        let doc = engine.store.read(&key_for(0)).unwrap();
        assert_eq!(doc.fields["counter"].as_i64(), Some(1));
        let s = engine.sample(a);
        assert_eq!(
            (s.class, s.latency()),
            (OpClass::Update, Duration::from_millis(2))
        );
    }

    #[test]
    fn raw_failure_on_missing_document() {
        let (clock, engine) = raw_engine();
        let mut run = engine
            .start(vec![Operation::read_modify_write(
                "absent",
                Modify::Increment {
                    field: "counter".into(),
                    delta: 1,
                },
            )])
            .unwrap();
        assert!(matches!(
            engine.poll(&mut run).unwrap(),
            RunStep::WaitUntil(_)
        ));
        clock.advance(Duration::from_millis(1));
        assert_eq!(
            engine.poll(&mut run).unwrap(),
            RunStep::Done(ExecutionResult::Failure(FailureReason::ConstraintViolation))
        );
        assert_eq!(clock.now(), Timestamp::from_millis(1));
    }

    #[test]
    fn framework_sample_is_classified() {
        let clock = VirtualClock::new();
        let config = BenchConfig {
            workload: WorkloadSpec::a().with_records(2),
            ..BenchConfig::default()
        };
        let engine = Engine::new(&config, 3, Arc::new(clock)).unwrap();
        let s = engine
            .run_blocking(vec![Operation::read(key_for(1))])
            .unwrap();
        assert!(s.committed());
        assert_eq!((s.class, s.retries), (OpClass::Read, 0));
        assert!(engine.is_quiescent());
        assert!(!engine.events.as_ref().unwrap().is_empty());
    }
}
