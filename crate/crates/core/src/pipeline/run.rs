use std::time::Duration;

use serde::Serialize;

use crate::clock::Timestamp;
use crate::context::TransactionContext;
use crate::store::Document;
use crate::types::{DocumentId, TxnId};

use super::{
    Execution, ExecutionResult, ExecutionStep, FailureReason, NotReady, Pipeline, PipelineError,
    ReadinessStatus, Stage, StageTimer, StageTimings, TransactionRequest,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStep {
    WaitUntil(Timestamp),
    Done(ExecutionResult),
}

#[derive(Debug, Clone)]
enum Phase {
    Assess,
    RetryWait(Timestamp),
    Executing(Box<Execution>),
    Done(ExecutionResult),
}

/// One request's journey through all four stages, including retries.
#[derive(Debug, Clone)]
pub struct TxnRun {
    tc: TransactionContext,
    phase: Phase,
    timer: StageTimer,
    started: Timestamp,
    finished: Option<Timestamp>,
    saw_conflict: bool,
    lock_wait: Duration,
    reads: Vec<(DocumentId, Option<Document>)>,
}

impl TxnRun {
    pub fn id(&self) -> TxnId {
        self.tc.id()
    }

    pub fn context(&self) -> &TransactionContext {
        &self.tc
    }

    pub fn result(&self) -> Option<ExecutionResult> {
        match self.phase {
            Phase::Done(r) => Some(r),
            _ => None,
        }
    }

    pub fn into_outcome(self) -> TransactionOutcome {
        TransactionOutcome {
            id: self.tc.id(),
            result: self.result().unwrap_or(ExecutionResult::RetryScheduled),
            timings: self.timer.timings(),
            started: self.started,
            finished: self.finished.unwrap_or(self.started),
            saw_conflict: self.saw_conflict,
            lock_wait: self.lock_wait,
            reads: self.reads,
            context: self.tc,
        }
    }
}

/// Final record of a transaction run.
#[derive(Debug, Clone, Serialize)]
pub struct TransactionOutcome {
    pub id: TxnId,
    pub result: ExecutionResult,
    pub context: TransactionContext,
    pub timings: StageTimings,
    pub started: Timestamp,
    pub finished: Timestamp,
    /// Turned away by the readiness check or refused a lock at least once.
    pub saw_conflict: bool,
    pub lock_wait: Duration,
    pub reads: Vec<(DocumentId, Option<Document>)>,
}

impl TransactionOutcome {
    pub fn latency(&self) -> Duration {
        self.finished - self.started
    }

    pub fn committed(&self) -> bool {
        self.result == ExecutionResult::Success
    }

    pub fn failure_reason(&self) -> Option<FailureReason> {
        self.result.failure_reason()
    }
}

impl Pipeline {
    /// Run stages one and two and return a run ready to be polled.
    pub fn start(&self, request: TransactionRequest) -> Result<TxnRun, PipelineError> {
        let started = self.clock.now();
        let mut timer = StageTimer::start(Stage::Init, started);
        let tc = self.init_transaction(request)?;
        timer.switch(Stage::Classify, self.clock.now());
        let tc = self.classify(tc);
        timer.switch(Stage::Assess, self.clock.now());
        Ok(TxnRun {
            tc,
            phase: Phase::Assess,
            timer,
            started,
            finished: None,
            saw_conflict: false,
            lock_wait: Duration::ZERO,
            reads: Vec::new(),
        })
    }

    /// Advance a run at the current clock reading.
    pub fn poll(&self, run: &mut TxnRun) -> Result<RunStep, PipelineError> {
        let now = self.clock.now();
        loop {
            match &mut run.phase {
                Phase::Done(r) => return Ok(RunStep::Done(*r)),
                Phase::Assess => {
                    let (status, _) = self.readiness_gate(&mut run.tc)?;
                    match status {
                        ReadinessStatus::Ready => {
                            run.timer.switch(Stage::Lock, now);
                            let exec = self.begin_execution(&mut run.tc)?;
                            run.phase = Phase::Executing(Box::new(exec));
                        }
                        ReadinessStatus::NotReady => {
                            run.saw_conflict = true;
                            match self.not_ready(&mut run.tc)? {
                                NotReady::Retry(wake) => {
                                    run.timer.switch(Stage::RetryWait, now);
                                    run.phase = Phase::RetryWait(wake);
                                    return Ok(RunStep::WaitUntil(wake));
                                }
                                NotReady::Failed => {
                                    run.timer.switch(Stage::Finish, now);
                                    return Ok(self.conclude(
                                        run,
                                        ExecutionResult::Failure(FailureReason::MaxRetriesExceeded),
                                        now,
                                    ));
                                }
                            }
                        }
                    }
                }
                Phase::RetryWait(wake) => {
                    if now < *wake {
                        return Ok(RunStep::WaitUntil(*wake));
                    }
                    self.retries.take(run.tc.id());
                    run.timer.switch(Stage::Assess, now);
                    run.phase = Phase::Assess;
                }
                Phase::Executing(exec) => {
                    match self.poll_execution(exec, &mut run.tc, &mut run.timer)? {
                        ExecutionStep::WaitUntil(t) => return Ok(RunStep::WaitUntil(t)),
                        ExecutionStep::Done(result) => {
                            run.lock_wait = exec.lock_wait();
                            run.saw_conflict |= exec.lock_denied();
                            run.reads = exec.take_reads();
                            let finished = self.clock.now();
                            return Ok(self.conclude(run, result, finished));
                        }
                    }
                }
            }
        }
    }

    fn conclude(&self, run: &mut TxnRun, result: ExecutionResult, at: Timestamp) -> RunStep {
        run.finished = Some(at);
        run.phase = Phase::Done(result);
        RunStep::Done(result)
    }
}
