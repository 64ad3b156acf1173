//! Structured event log: one JSON object per line, one line per stage
//! transition or data operation. The serializability oracle and the
//! strict-2PL audit both read this format.

use std::io::{BufRead, Write};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::SharedClock;
use crate::types::{DocumentId, LockMode, TransactionState, TransactionType, TxnId};

use super::FailureReason;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    Init,
    Classify,
    Ready,
    NotReady,
    Retry,
    Execute,
    Locked,
    Read,
    Write,
    Commit,
    Abort,
    Release,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvent {
    pub seq: u64,
    /// Clock reading in nanoseconds.
    pub t: u64,
    pub tx: TxnId,
    pub event: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc: Option<DocumentId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<LockMode>,
    /// Transaction state after this event, when the event changes it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<TransactionState>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "type")]
    pub txn_type: Option<TransactionType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<FailureReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wake: Option<u64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub forced: bool,
}

impl LogEvent {
    pub fn new(tx: TxnId, event: EventKind) -> Self {
        LogEvent {
            seq: 0,
            t: 0,
            tx,
            event,
            doc: None,
            mode: None,
            state: None,
            txn_type: None,
            reason: None,
            retry: None,
            wake: None,
            forced: false,
        }
    }

    pub fn doc(mut self, doc: &DocumentId) -> Self {
        self.doc = Some(doc.clone());
        self
    }

    pub fn mode(mut self, mode: LockMode) -> Self {
        self.mode = Some(mode);
        self
    }

    pub fn state(mut self, state: TransactionState) -> Self {
        self.state = Some(state);
        self
    }
}

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// In-memory, globally sequenced event log. `seq` and `t` are assigned
/// under one lock, so both are monotone in log order.
#[derive(Debug)]
pub struct EventLog {
    clock: SharedClock,
    events: Mutex<Vec<LogEvent>>,
}

impl EventLog {
    pub fn new(clock: SharedClock) -> Self {
        EventLog {
            clock,
            events: Mutex::new(Vec::new()),
        }
    }

    pub fn emit(&self, mut event: LogEvent) {
        let mut events = self.events.lock();
        event.seq = events.len() as u64 + 1;
        event.t = self.clock.now().as_nanos();
        events.push(event);
    }

    pub fn len(&self) -> usize {
        self.events.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn events(&self) -> Vec<LogEvent> {
        self.events.lock().clone()
    }

    pub fn take(&self) -> Vec<LogEvent> {
        std::mem::take(&mut *self.events.lock())
    }

    pub fn write_jsonl(&self, w: impl Write) -> Result<(), EventLogError> {
        write_jsonl(&self.events.lock(), w)
    }
}

pub fn write_jsonl(events: &[LogEvent], mut w: impl Write) -> Result<(), EventLogError> {
    for e in events {
        serde_json::to_writer(&mut w, e).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(r: impl BufRead) -> Result<Vec<LogEvent>, EventLogError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| EventLogError::Parse {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use std::sync::Arc;

    #[test]
    fn line_format() {
        let clock = VirtualClock::new();
        clock.advance(std::time::Duration::from_nanos(42));
        let log = EventLog::new(Arc::new(clock));
        let tx = TxnId::from_random_bytes([0; 16]);
        log.emit(LogEvent::new(tx, EventKind::Init).state(TransactionState::Pending));
        log.emit(LogEvent::new(tx, EventKind::Write).doc(&"user1".into()));
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            format!(r#"{{"seq":1,"t":42,"tx":"{tx}","event":"INIT","state":"PENDING"}}"#)
        );
        assert_eq!(read_jsonl(&buf[..]).unwrap(), log.events());
    }
}
