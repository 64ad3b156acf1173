use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use crate::clock::Timestamp;
use crate::context::TransactionContext;
use crate::lockmgr::{AcquireOutcome, AcquireStep, LockAcquisition};
use crate::store::{Document, WriteOutcome};
use crate::types::{DocumentId, LockMode, OpKind, TransactionState};

use super::{
    EventKind, ExecutionResult, FailureReason, LogEvent, Pipeline, PipelineError, Stage, StageTimer,
};

/// Pre-images captured before the first write to each document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UndoLog {
    pre_images: BTreeMap<DocumentId, Option<Document>>,
    written: Vec<DocumentId>,
}

impl UndoLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Keep `image` as the pre-image of `doc` unless one is already held.
    pub fn capture(&mut self, doc: &DocumentId, image: impl FnOnce() -> Option<Document>) {
        if !self.pre_images.contains_key(doc) {
            self.pre_images.insert(doc.clone(), image());
        }
    }

    /// Note that `doc` was modified. Each document is listed once, in the
    /// order of its first write.
    pub fn record_write(&mut self, doc: &DocumentId) {
        if !self.written.contains(doc) {
            self.written.push(doc.clone());
        }
    }

    pub fn pre_image(&self, doc: &DocumentId) -> Option<&Option<Document>> {
        self.pre_images.get(doc)
    }

    pub fn written(&self) -> &[DocumentId] {
        &self.written
    }

    pub fn is_empty(&self) -> bool {
        self.written.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecutionStep {
    WaitUntil(Timestamp),
    Done(ExecutionResult),
}

#[derive(Debug, Clone)]
enum Phase {
    Locking,
    Data,
    Done(ExecutionResult),
}

/// Stage four for one transaction as a resumable state machine.
#[derive(Debug, Clone)]
pub struct Execution {
    plan: Vec<(DocumentId, LockMode)>,
    next_lock: usize,
    acq: Option<LockAcquisition>,
    phase: Phase,
    op: usize,
    op_due: Option<Timestamp>,
    undo: UndoLog,
    reads: Vec<(DocumentId, Option<Document>)>,
    lock_wait: Duration,
    lock_denied: bool,
}

impl Execution {
    /// Documents to lock, in acquisition order.
    pub fn plan(&self) -> &[(DocumentId, LockMode)] {
        &self.plan
    }

    pub fn undo_log(&self) -> &UndoLog {
        &self.undo
    }

    /// Every document image read, in operation order.
    pub fn reads(&self) -> &[(DocumentId, Option<Document>)] {
        &self.reads
    }

    pub(crate) fn take_reads(&mut self) -> Vec<(DocumentId, Option<Document>)> {
        std::mem::take(&mut self.reads)
    }

    /// Time spent inside lock acquisition loops.
    pub fn lock_wait(&self) -> Duration {
        self.lock_wait
    }

    /// Some lock attempt was refused.
    pub fn lock_denied(&self) -> bool {
        self.lock_denied
    }

    pub fn result(&self) -> Option<ExecutionResult> {
        match self.phase {
            Phase::Done(r) => Some(r),
            _ => None,
        }
    }
}

impl Pipeline {
    /// Enter stage four: move a `READY` context to `EXECUTING` and plan
    /// its lock acquisitions in canonical document order.
    pub fn begin_execution(&self, tc: &mut TransactionContext) -> Result<Execution, PipelineError> {
        if !tc.is_classified() {
            return Err(PipelineError::Unclassified(tc.id()));
        }
        tc.transition(TransactionState::Executing)?;
        self.emit(LogEvent::new(tc.id(), EventKind::Execute).state(TransactionState::Executing));
        let docs: BTreeSet<&DocumentId> = tc.read_set().iter().chain(tc.write_set()).collect();
        let plan = docs
            .into_iter()
            .map(|d| (d.clone(), self.lock_mode_for(tc, d)))
            .collect();
        Ok(Execution {
            plan,
            next_lock: 0,
            acq: None,
            phase: Phase::Locking,
            op: 0,
            op_due: None,
            undo: UndoLog::new(),
            reads: Vec::new(),
            lock_wait: Duration::ZERO,
            lock_denied: false,
        })
    }

    /// Advance an execution at the current clock reading.
    ///
    /// On `Done` the transaction is terminal, its locks are released and it
    /// is no longer registered. If an internal error surfaces, the locks are
    /// still released before the error is returned.
    pub fn poll_execution(
        &self,
        exec: &mut Execution,
        tc: &mut TransactionContext,
        timer: &mut StageTimer,
    ) -> Result<ExecutionStep, PipelineError> {
        let step = self.step_execution(exec, tc, timer);
        if step.is_err() {
            if let Some(acq) = exec.acq.as_mut() {
                self.locks.abandon_acquisition(acq, self.clock.now());
            }
            self.release_all(tc);
            self.deregister(tc.id());
        }
        step
    }

    fn step_execution(
        &self,
        exec: &mut Execution,
        tc: &mut TransactionContext,
        timer: &mut StageTimer,
    ) -> Result<ExecutionStep, PipelineError> {
        let now = self.clock.now();
        loop {
            match exec.phase {
                Phase::Done(r) => return Ok(ExecutionStep::Done(r)),
                Phase::Locking => {
                    if self.locks.was_auto_released(tc.id()) {
                        if let Some(mut acq) = exec.acq.take() {
                            let report = self.locks.abandon_acquisition(&mut acq, now);
                            exec.lock_wait += report.waited;
                        }
                        return self.fail(exec, tc, timer, FailureReason::AutoReleased);
                    }
                    if exec.acq.is_none() {
                        if exec.next_lock == exec.plan.len() {
                            if !self.locks.begin_data_phase(tc.id()) {
                                return self.fail(exec, tc, timer, FailureReason::AutoReleased);
                            }
                            timer.switch(Stage::Execute, now);
                            exec.phase = Phase::Data;
                            continue;
                        }
                        let (doc, mode) = exec.plan[exec.next_lock].clone();
                        exec.acq = Some(self.locks.begin_acquisition(
                            doc,
                            tc.id(),
                            mode,
                            self.config.lock_timeout,
                            &self.config.backoff,
                        ));
                    }
                    let acq = exec.acq.as_mut().expect("acquisition in flight");
                    match self.locks.poll_acquisition(acq, now) {
                        AcquireStep::WaitUntil(t) => {
                            exec.lock_denied = true;
                            return Ok(ExecutionStep::WaitUntil(t));
                        }
                        AcquireStep::Done(report) => {
                            let acq = exec.acq.take().expect("acquisition in flight");
                            exec.lock_wait += report.waited;
                            match report.outcome {
                                AcquireOutcome::Success => {
                                    let (doc, mode) = (acq.doc().clone(), acq.mode());
                                    self.emit(
                                        LogEvent::new(tc.id(), EventKind::Locked)
                                            .doc(&doc)
                                            .mode(mode),
                                    );
                                    tc.acquired_locks.push((doc, mode));
                                    exec.next_lock += 1;
                                }
                                AcquireOutcome::Failure => {
                                    exec.lock_denied = true;
                                    log::debug!("{} timed out locking {}", tc.id(), acq.doc());
                                    return self.fail(exec, tc, timer, FailureReason::LockTimeout);
                                }
                            }
                        }
                    }
                }
                Phase::Data => {
                    if exec.op == tc.operations.len() {
                        return self.commit(exec, tc, timer);
                    }
                    match exec.op_due {
                        None => {
                            let delay = match tc.operations[exec.op].kind() {
                                OpKind::Read => self.store.read_delay(),
                                OpKind::ReadModifyWrite => {
                                    self.store.read_delay() + self.store.write_delay()
                                }
                                _ => self.store.write_delay(),
                            };
                            if !delay.is_zero() {
                                let due = now + delay;
                                exec.op_due = Some(due);
                                return Ok(ExecutionStep::WaitUntil(due));
                            }
                        }
                        Some(due) if now < due => return Ok(ExecutionStep::WaitUntil(due)),
                        Some(_) => {}
                    }
                    exec.op_due = None;
                    if !self.apply_op(exec, tc)? {
                        return self.fail(exec, tc, timer, FailureReason::ConstraintViolation);
                    }
                    exec.op += 1;
                }
            }
        }
    }

    /// Run operation `exec.op` against the store. Returns false when a
    /// write is refused.
    fn apply_op(
        &self,
        exec: &mut Execution,
        tc: &TransactionContext,
    ) -> Result<bool, PipelineError> {
        let op = &tc.operations[exec.op];
        let doc = op.doc();
        if op.kind().is_read() {
            let image = self.store.read(doc);
            self.emit(LogEvent::new(tc.id(), EventKind::Read).doc(doc));
            exec.reads.push((doc.clone(), image));
        }
        if !op.kind().is_write() {
            return Ok(true);
        }
        exec.undo.capture(doc, || self.store.read(doc));
        match self.store.write(op)? {
            WriteOutcome::Applied => {
                exec.undo.record_write(doc);
                self.emit(LogEvent::new(tc.id(), EventKind::Write).doc(doc));
                Ok(true)
            }
            WriteOutcome::NotFound | WriteOutcome::ConstraintViolation => {
                log::debug!("{} write to {} refused", tc.id(), doc);
                Ok(false)
            }
        }
    }

    fn commit(
        &self,
        exec: &mut Execution,
        tc: &mut TransactionContext,
        timer: &mut StageTimer,
    ) -> Result<ExecutionStep, PipelineError> {
        if self.locks.was_auto_released(tc.id()) {
            return self.fail(exec, tc, timer, FailureReason::AutoReleased);
        }
        timer.switch(Stage::Finish, self.clock.now());
        tc.transition(TransactionState::Committed)?;
        self.emit(LogEvent::new(tc.id(), EventKind::Commit).state(TransactionState::Committed));
        self.finish(exec, tc, timer, ExecutionResult::Success)
    }

    fn fail(
        &self,
        exec: &mut Execution,
        tc: &mut TransactionContext,
        timer: &mut StageTimer,
        reason: FailureReason,
    ) -> Result<ExecutionStep, PipelineError> {
        timer.switch(Stage::Finish, self.clock.now());
        self.rollback(tc, &exec.undo)?;
        let mut ev = LogEvent::new(tc.id(), EventKind::Abort).state(TransactionState::Aborted);
        ev.reason = Some(reason);
        self.emit(ev);
        self.finish(exec, tc, timer, ExecutionResult::Failure(reason))
    }

    fn finish(
        &self,
        exec: &mut Execution,
        tc: &mut TransactionContext,
        timer: &mut StageTimer,
        result: ExecutionResult,
    ) -> Result<ExecutionStep, PipelineError> {
        self.release_all(tc);
        self.deregister(tc.id());
        timer.switch(Stage::Finish, self.clock.now());
        exec.phase = Phase::Done(result);
        Ok(ExecutionStep::Done(result))
    }

    /// Restore every pre-image in `undo`, newest write first, and move the
    /// context to `ABORTED`. Nothing is restored if any written document
    /// lacks a pre-image.
    pub fn rollback(
        &self,
        tc: &mut TransactionContext,
        undo: &UndoLog,
    ) -> Result<(), PipelineError> {
        let mut images = Vec::with_capacity(undo.written().len());
        for doc in undo.written().iter().rev() {
            let image = undo
                .pre_image(doc)
                .ok_or_else(|| PipelineError::MissingPreImage {
                    tx: tc.id(),
                    doc: doc.clone(),
                })?;
            images.push((doc, image));
        }
        tc.transition(TransactionState::Aborted)?;
        for (doc, image) in images {
            self.store.restore(doc, image.clone());
        }
        Ok(())
    }

    /// Release held locks in reverse acquisition order.
    fn release_all(&self, tc: &mut TransactionContext) {
        for (doc, _) in tc.acquired_locks.iter().rev() {
            if self.locks.try_release(doc, tc.id()) {
                self.emit(LogEvent::new(tc.id(), EventKind::Release).doc(doc));
            }
        }
        tc.acquired_locks.clear();
    }
}
