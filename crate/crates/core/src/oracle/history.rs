use std::collections::{BTreeSet, HashSet};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{EventKind, LogEvent};
use crate::types::{DocumentId, TxnId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HistoryKind {
    Read,
    Write,
    Commit,
    Abort,
}

impl HistoryKind {
    pub fn is_data(self) -> bool {
        matches!(self, HistoryKind::Read | HistoryKind::Write)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub seq: u64,
    pub tx: TxnId,
    pub kind: HistoryKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc: Option<DocumentId>,
}

impl HistoryEvent {
    pub fn read(seq: u64, tx: TxnId, doc: impl Into<DocumentId>) -> Self {
        HistoryEvent {
            seq,
            tx,
            kind: HistoryKind::Read,
            doc: Some(doc.into()),
        }
    }

    pub fn write(seq: u64, tx: TxnId, doc: impl Into<DocumentId>) -> Self {
        HistoryEvent {
            seq,
            tx,
            kind: HistoryKind::Write,
            doc: Some(doc.into()),
        }
    }

    pub fn commit(seq: u64, tx: TxnId) -> Self {
        HistoryEvent {
            seq,
            tx,
            kind: HistoryKind::Commit,
            doc: None,
        }
    }

    pub fn abort(seq: u64, tx: TxnId) -> Self {
        HistoryEvent {
            seq,
            tx,
            kind: HistoryKind::Abort,
            doc: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("seq {got} does not follow {last}")]
    OutOfOrder { last: u64, got: u64 },
    #[error("seq {seq}: data event without a document")]
    MissingDoc { seq: u64 },
    #[error("seq {seq}: {tx} has already committed or aborted")]
    AfterOutcome { seq: u64, tx: TxnId },
}

/// A seq-ordered execution history.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    events: Vec<HistoryEvent>,
    #[serde(skip)]
    finished: HashSet<TxnId>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append an event. Its seq must exceed every recorded seq, and a
    /// transaction may not act after its commit or abort.
    pub fn record(&mut self, event: HistoryEvent) -> Result<(), HistoryError> {
        if let Some(last) = self.events.last() {
            if event.seq <= last.seq {
                return Err(HistoryError::OutOfOrder {
                    last: last.seq,
                    got: event.seq,
                });
            }
        }
        if event.kind.is_data() && event.doc.is_none() {
            return Err(HistoryError::MissingDoc { seq: event.seq });
        }
        if self.finished.contains(&event.tx) {
            return Err(HistoryError::AfterOutcome {
                seq: event.seq,
                tx: event.tx,
            });
        }
        if !event.kind.is_data() {
            self.finished.insert(event.tx);
        }
        self.events.push(event);
        Ok(())
    }

    /// Extract the data and outcome events of a pipeline event log.
    pub fn from_log(log: &[LogEvent]) -> Result<Self, HistoryError> {
        let mut h = History::new();
        for e in log {
            let kind = match e.event {
                EventKind::Read => HistoryKind::Read,
                EventKind::Write => HistoryKind::Write,
                EventKind::Commit => HistoryKind::Commit,
                EventKind::Abort => HistoryKind::Abort,
                _ => continue,
            };
            h.record(HistoryEvent {
                seq: e.seq,
                tx: e.tx,
                kind,
                doc: e.doc.clone(),
            })?;
        }
        Ok(h)
    }

    pub fn events(&self) -> &[HistoryEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn committed(&self) -> BTreeSet<TxnId> {
        self.events
            .iter()
            .filter(|e| e.kind == HistoryKind::Commit)
            .map(|e| e.tx)
            .collect()
    }

    /// Data events of committed transactions, in seq order.
    pub fn committed_ops(&self) -> impl Iterator<Item = (&TxnId, HistoryKind, &DocumentId)> {
        let committed = self.committed();
        self.events
            .iter()
            .filter(move |e| e.kind.is_data() && committed.contains(&e.tx))
            .map(|e| {
                (
                    &e.tx,
                    e.kind,
                    e.doc.as_ref().expect("data events carry a document"),
                )
            })
    }
}

/// Thread-safe history capture with a single sequencer.
#[derive(Debug, Default)]
pub struct HistoryRecorder {
    inner: Mutex<History>,
}

impl HistoryRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assign the next seq and append.
    pub fn append(
        &self,
        tx: TxnId,
        kind: HistoryKind,
        doc: Option<DocumentId>,
    ) -> Result<u64, HistoryError> {
        let mut h = self.inner.lock();
        let seq = h.events.last().map_or(1, |e| e.seq + 1);
        h.record(HistoryEvent { seq, tx, kind, doc })?;
        Ok(seq)
    }

    pub fn snapshot(&self) -> History {
        self.inner.lock().clone()
    }
}
