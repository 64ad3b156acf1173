//! The four-stage transaction pipeline.
//!
//! 1. **Initialization** assigns an id and a monotonic timestamp and
//!    registers the transaction.
//! 2. **Classification** derives the type, lock mode and read/write sets.
//! 3. **Readiness assessment** looks at the lock table and refuses to start
//!    a transaction whose documents are visibly contended. Refused
//!    transactions are parked in the [`RetryQueue`] with exponential backoff.
//! 4. **Execution** acquires every lock in canonical document order, runs
//!    the operations, commits or rolls back, and releases in reverse order.
//!
//! Stage three is an optimization gate only; serializability rests on
//! stage four holding every lock from before the first data operation
//! until after the outcome is decided.
//!
//! Stages three and four are written as resumable step machines
//! ([`TxnRun`], [`Execution`]) polled with the current time. The blocking
//! entry points ([`Pipeline::run_transaction`], [`Pipeline::execute`])
//! drive them by sleeping on the pipeline's clock; a simulator can drive
//! the same machines under virtual time.

mod classify;
pub mod events;
mod execute;
mod retry;
mod run;

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classify::classify;
pub use events::{EventKind, EventLog, LogEvent};
pub use execute::{Execution, ExecutionStep, UndoLog};
pub use retry::RetryQueue;
pub use run::{RunStep, TransactionOutcome, TxnRun};

use crate::clock::{SharedClock, Timestamp};
use crate::context::{IllegalTransition, TransactionContext};
use crate::lockmgr::{BackoffPolicy, LockManager, PolicyError};
use crate::store::{DocumentStore, StoreError};
use crate::types::{
    DocumentId, LockMode, Operation, OperationError, TransactionState, TransactionType, TxnId,
};

/// Lock mode for documents a `HYBRID` transaction only reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HybridReadLocks {
    /// Every document of a hybrid transaction is locked exclusively.
    #[default]
    Exclusive,
    /// Read-only documents of a hybrid transaction take shared locks.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub lock_timeout: Duration,
    pub backoff: BackoffPolicy,
    pub max_retries: u32,
    pub hybrid_read_locks: HybridReadLocks,
    /// Run stage three. When false every transaction is treated as ready
    /// and conflicts surface only during lock acquisition.
    pub readiness_check: bool,
    /// Seed for transaction ids. `None` draws from the OS.
    pub id_seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            lock_timeout: Duration::from_millis(100),
            backoff: BackoffPolicy::default(),
            max_retries: 3,
            hybrid_read_locks: HybridReadLocks::Exclusive,
            readiness_check: true,
            id_seed: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.lock_timeout.is_zero() {
            return Err(PipelineError::Config(
                "lock_timeout must be positive".into(),
            ));
        }
        self.backoff.validated()?;
        Ok(())
    }

    /// Base wait before retry number `retry_count + 1`.
    pub fn retry_delay(&self, retry_count: u32) -> Duration {
        self.backoff.base_wait(retry_count)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReadinessStatus {
    Ready,
    NotReady,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConflictCause {
    Holder(TxnId),
    PendingWrite,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConflictRecord {
    pub doc: DocumentId,
    pub cause: ConflictCause,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureReason {
    MaxRetriesExceeded,
    LockTimeout,
    ConstraintViolation,
    AutoReleased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExecutionResult {
    Success,
    Failure(FailureReason),
    RetryScheduled,
}

impl ExecutionResult {
    pub fn failure_reason(&self) -> Option<FailureReason> {
        match self {
            ExecutionResult::Failure(r) => Some(*r),
            _ => None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self, ExecutionResult::RetryScheduled)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("transaction id {0} is already registered")]
    DuplicateId(TxnId),
    #[error("invalid operation: {0}")]
    InvalidOperation(#[from] OperationError),
    #[error(transparent)]
    IllegalTransition(#[from] IllegalTransition),
    #[error("{tx} wrote {doc} without capturing a pre-image")]
    MissingPreImage { tx: TxnId, doc: DocumentId },
    #[error("transaction {0} has not been classified")]
    Unclassified(TxnId),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// A transaction as submitted by a client: its full operation list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionRequest {
    pub client_id: Option<String>,
    pub operations: Vec<Operation>,
}

impl TransactionRequest {
    pub fn new(operations: Vec<Operation>) -> Self {
        TransactionRequest {
            client_id: None,
            operations,
        }
    }

    pub fn client(mut self, id: impl Into<String>) -> Self {
        self.client_id = Some(id.into());
        self
    }
}

/// Where a transaction's time went.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub init: Duration,
    pub classify: Duration,
    pub assess: Duration,
    pub retry_wait: Duration,
    pub lock: Duration,
    pub execute: Duration,
    pub finish: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.init
            + self.classify
            + self.assess
            + self.retry_wait
            + self.lock
            + self.execute
            + self.finish
    }

    pub fn add(&mut self, other: &StageTimings) {
        self.init += other.init;
        self.classify += other.classify;
        self.assess += other.assess;
        self.retry_wait += other.retry_wait;
        self.lock += other.lock;
        self.execute += other.execute;
        self.finish += other.finish;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Init,
    Classify,
    Assess,
    RetryWait,
    Lock,
    Execute,
    Finish,
}

/// Attributes elapsed time to whichever stage was current.
#[derive(Debug, Clone)]
pub struct StageTimer {
    current: Stage,
    since: Timestamp,
    acc: StageTimings,
}

impl StageTimer {
    pub fn start(stage: Stage, now: Timestamp) -> Self {
        StageTimer {
            current: stage,
            since: now,
            acc: StageTimings::default(),
        }
    }

    pub fn switch(&mut self, next: Stage, now: Timestamp) {
        let d = now - self.since;
        let slot = match self.current {
            Stage::Init => &mut self.acc.init,
            Stage::Classify => &mut self.acc.classify,
            Stage::Assess => &mut self.acc.assess,
            Stage::RetryWait => &mut self.acc.retry_wait,
            Stage::Lock => &mut self.acc.lock,
            Stage::Execute => &mut self.acc.execute,
            Stage::Finish => &mut self.acc.finish,
        };
        *slot += d;
        self.current = next;
        self.since = now;
    }

    pub fn timings(&self) -> StageTimings {
        self.acc
    }
}

enum NotReady {
    Retry(Timestamp),
    Failed,
}

pub struct Pipeline {
    config: PipelineConfig,
    store: Arc<dyn DocumentStore>,
    locks: Arc<LockManager>,
    clock: SharedClock,
    registry: Mutex<HashMap<TxnId, Timestamp>>,
    retries: RetryQueue,
    events: Option<Arc<EventLog>>,
    ids: Mutex<ChaCha8Rng>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("config", &self.config)
            .field("active", &self.registry.lock().len())
            .finish()
    }
}

impl Pipeline {
    pub fn new(
        config: PipelineConfig,
        store: Arc<dyn DocumentStore>,
        clock: SharedClock,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let locks =
            Arc::new(LockManager::new(clock.clone()).with_default_timeout(config.lock_timeout));
        let ids = match config.id_seed {
            Some(seed) => ChaCha8Rng::seed_from_u64(seed),
            None => ChaCha8Rng::from_entropy(),
        };
        Ok(Pipeline {
            config,
            store,
            locks,
            clock,
            registry: Mutex::new(HashMap::new()),
            retries: RetryQueue::new(),
            events: None,
            ids: Mutex::new(ids),
        })
    }

    /// Share an existing lock manager (which should use the same clock).
    pub fn with_lock_manager(mut self, locks: Arc<LockManager>) -> Self {
        self.locks = locks;
        self
    }

    pub fn with_event_log(mut self, log: Arc<EventLog>) -> Self {
        self.events = Some(log);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn locks(&self) -> &Arc<LockManager> {
        &self.locks
    }

    pub fn store(&self) -> &Arc<dyn DocumentStore> {
        &self.store
    }

    pub fn clock(&self) -> &SharedClock {
        &self.clock
    }

    pub fn retry_queue(&self) -> &RetryQueue {
        &self.retries
    }

    pub fn event_log(&self) -> Option<&Arc<EventLog>> {
        self.events.as_ref()
    }

    /// Number of registered, not yet terminal transactions.
    pub fn active_count(&self) -> usize {
        self.registry.lock().len()
    }

    pub(crate) fn emit(&self, event: LogEvent) {
        if let Some(log) = &self.events {
            log.emit(event);
        }
    }

    fn next_id(&self) -> TxnId {
        let mut bytes = [0u8; 16];
        self.ids.lock().fill_bytes(&mut bytes);
        TxnId::from_random_bytes(bytes)
    }

    /// Stage one: create, timestamp and register a context.
    pub fn init_transaction(
        &self,
        request: TransactionRequest,
    ) -> Result<TransactionContext, PipelineError> {
        let id = self.next_id();
        self.init_transaction_with_id(id, request)
    }

    /// Stage one with a caller-chosen id. A collision with a registered
    /// transaction is an error.
    pub fn init_transaction_with_id(
        &self,
        id: TxnId,
        request: TransactionRequest,
    ) -> Result<TransactionContext, PipelineError> {
        for op in &request.operations {
            op.validate()?;
        }
        let client = request.client_id.unwrap_or_else(|| "anonymous".to_owned());
        let now = self.clock.now();
        {
            let mut registry = self.registry.lock();
            if registry.contains_key(&id) {
                return Err(PipelineError::DuplicateId(id));
            }
            registry.insert(id, now);
        }
        let tc =
            TransactionContext::new(id, now, client, request.operations, self.config.max_retries);
        self.emit(LogEvent::new(id, EventKind::Init).state(TransactionState::Pending));
        Ok(tc)
    }

    pub(crate) fn deregister(&self, id: TxnId) {
        self.registry.lock().remove(&id);
        self.locks.end_transaction(id);
    }

    /// Stage two.
    pub fn classify(&self, tc: TransactionContext) -> TransactionContext {
        let tc = classify(tc);
        let mut ev = LogEvent::new(tc.id(), EventKind::Classify);
        ev.txn_type = tc.txn_type();
        self.emit(ev);
        tc
    }

    /// Stage three. Write-set documents held by anyone else are conflicts;
    /// only if none are found are read-set documents checked for another
    /// transaction's exclusive lock. A `READY` verdict moves the context
    /// to `READY`.
    pub fn assess_readiness(
        &self,
        tc: &mut TransactionContext,
    ) -> Result<(ReadinessStatus, BTreeSet<ConflictRecord>), PipelineError> {
        let ty = tc.txn_type().ok_or(PipelineError::Unclassified(tc.id()))?;
        let mut status = ReadinessStatus::Ready;
        let mut conflicts = BTreeSet::new();

        if matches!(ty, TransactionType::Write | TransactionType::Hybrid) {
            for doc in tc.write_set() {
                if let Some(info) = self.locks.current_holder(doc) {
                    for holder in info.holders.iter().filter(|h| **h != tc.id()) {
                        status = ReadinessStatus::NotReady;
                        conflicts.insert(ConflictRecord {
                            doc: doc.clone(),
                            cause: ConflictCause::Holder(*holder),
                        });
                    }
                }
            }
        }

        if status == ReadinessStatus::Ready
            && matches!(ty, TransactionType::Read | TransactionType::Hybrid)
        {
            for doc in tc.read_set() {
                if self.locks.has_pending_write(doc)
                    && self.locks.write_holder(doc) != Some(tc.id())
                {
                    status = ReadinessStatus::NotReady;
                    conflicts.insert(ConflictRecord {
                        doc: doc.clone(),
                        cause: ConflictCause::PendingWrite,
                    });
                }
            }
        }

        match status {
            ReadinessStatus::NotReady => {
                tc.conflict_timestamp = Some(self.clock.now());
                let mut ev = LogEvent::new(tc.id(), EventKind::NotReady);
                ev.retry = Some(tc.retry_count());
                self.emit(ev);
            }
            ReadinessStatus::Ready => {
                tc.transition(TransactionState::Ready)?;
                self.emit(LogEvent::new(tc.id(), EventKind::Ready).state(TransactionState::Ready));
            }
        }
        Ok((status, conflicts))
    }

    /// Stage three as configured: the real assessment, or an unconditional
    /// `READY` when the readiness check is disabled.
    pub(crate) fn readiness_gate(
        &self,
        tc: &mut TransactionContext,
    ) -> Result<(ReadinessStatus, BTreeSet<ConflictRecord>), PipelineError> {
        if self.config.readiness_check {
            return self.assess_readiness(tc);
        }
        tc.transition(TransactionState::Ready)?;
        let mut ev = LogEvent::new(tc.id(), EventKind::Ready).state(TransactionState::Ready);
        ev.forced = true;
        self.emit(ev);
        Ok((ReadinessStatus::Ready, BTreeSet::new()))
    }

    /// The `NOT_READY` branch of stage four: park for a retry while the
    /// budget lasts, otherwise fail. The retry count is incremented when the
    /// retry is scheduled.
    fn not_ready(&self, tc: &mut TransactionContext) -> Result<NotReady, PipelineError> {
        if tc.retry_count() < tc.max_retries() {
            let wake = self.clock.now() + self.config.retry_delay(tc.retry_count());
            tc.increment_retry();
            let mut ev = LogEvent::new(tc.id(), EventKind::Retry);
            ev.retry = Some(tc.retry_count());
            ev.wake = Some(wake.as_nanos());
            self.emit(ev);
            self.retries.schedule(wake, tc.clone());
            Ok(NotReady::Retry(wake))
        } else {
            log::debug!(
                "{} failed: retry budget of {} exhausted",
                tc.id(),
                tc.max_retries()
            );
            tc.transition(TransactionState::Aborted)?;
            let mut ev = LogEvent::new(tc.id(), EventKind::Abort).state(TransactionState::Aborted);
            ev.reason = Some(FailureReason::MaxRetriesExceeded);
            self.emit(ev);
            self.deregister(tc.id());
            Ok(NotReady::Failed)
        }
    }

    /// Lock mode stage four uses for `doc`.
    pub fn lock_mode_for(&self, tc: &TransactionContext, doc: &DocumentId) -> LockMode {
        if tc.write_set().contains(doc) {
            return LockMode::Exclusive;
        }
        match tc.txn_type() {
            Some(TransactionType::Hybrid) => match self.config.hybrid_read_locks {
                HybridReadLocks::Exclusive => LockMode::Exclusive,
                HybridReadLocks::Shared => LockMode::Shared,
            },
            _ => tc.lock_mode().unwrap_or(LockMode::Shared),
        }
    }

    /// Stage four, blocking on the pipeline clock.
    ///
    /// `NOT_READY` schedules a retry (or fails once the budget is spent).
    /// `READY` runs the whole execution; a lock timeout fails the
    /// transaction outright without consuming a retry.
    pub fn execute(
        &self,
        tc: &mut TransactionContext,
        status: ReadinessStatus,
    ) -> Result<ExecutionResult, PipelineError> {
        if status == ReadinessStatus::NotReady {
            return Ok(match self.not_ready(tc)? {
                NotReady::Retry(_) => ExecutionResult::RetryScheduled,
                NotReady::Failed => ExecutionResult::Failure(FailureReason::MaxRetriesExceeded),
            });
        }
        let mut timer = StageTimer::start(Stage::Lock, self.clock.now());
        let mut exec = self.begin_execution(tc)?;
        loop {
            match self.poll_execution(&mut exec, tc, &mut timer)? {
                ExecutionStep::WaitUntil(t) => self.clock.sleep_until(t),
                ExecutionStep::Done(result) => return Ok(result),
            }
        }
    }

    /// Drive a request through every stage, including retry wake-ups,
    /// until it commits or fails.
    pub fn run_transaction(
        &self,
        request: TransactionRequest,
    ) -> Result<TransactionOutcome, PipelineError> {
        let mut run = self.start(request)?;
        loop {
            match self.poll(&mut run)? {
                RunStep::WaitUntil(t) => self.clock.sleep_until(t),
                RunStep::Done(_) => return Ok(run.into_outcome()),
            }
        }
    }
}
