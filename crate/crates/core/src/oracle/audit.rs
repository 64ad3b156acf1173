use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::pipeline::{EventKind, LogEvent};
use crate::types::{DocumentId, LockMode, TransactionState, TxnId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogViolation {
    #[error("seq {seq}: {tx} locked {doc} after its first data operation")]
    LockAfterData {
        seq: u64,
        tx: TxnId,
        doc: DocumentId,
    },
    #[error("seq {seq}: {tx} released {doc} before committing or aborting")]
    EarlyRelease {
        seq: u64,
        tx: TxnId,
        doc: DocumentId,
    },
    #[error("seq {seq}: {tx} accessed {doc} without a sufficient lock")]
    Unlocked {
        seq: u64,
        tx: TxnId,
        doc: DocumentId,
    },
    #[error("seq {seq}: {tx} locked {doc} after {prev}")]
    LockOrder {
        seq: u64,
        tx: TxnId,
        doc: DocumentId,
        prev: DocumentId,
    },
    #[error("seq {seq}: {tx} acted after its outcome")]
    AfterOutcome { seq: u64, tx: TxnId },
    #[error("seq {seq}: {tx} moved {from:?} -> {to:?}")]
    IllegalState {
        seq: u64,
        tx: TxnId,
        from: Option<TransactionState>,
        to: TransactionState,
    },
    #[error("seq {seq}: {tx} missing its INIT event")]
    NoInit { seq: u64, tx: TxnId },
}

#[derive(Default)]
struct LockTrace {
    held: BTreeMap<DocumentId, LockMode>,
    last_locked: Option<DocumentId>,
    touched_data: bool,
    decided: bool,
}

/// Check the strict two-phase shape of every transaction in an event log:
/// locks are taken in ascending document order before any data operation,
/// every data operation is covered by a held lock (exclusive for writes),
/// and nothing is released before the commit or abort.
pub fn audit_strict_2pl(events: &[LogEvent]) -> Result<(), LogViolation> {
    let mut traces: HashMap<TxnId, LockTrace> = HashMap::new();
    for e in events {
        let t = traces.entry(e.tx).or_default();
        let doc = || e.doc.clone().unwrap_or_else(|| DocumentId::new(""));
        match e.event {
            EventKind::Locked => {
                if t.decided {
                    return Err(LogViolation::AfterOutcome {
                        seq: e.seq,
                        tx: e.tx,
                    });
                }
                if t.touched_data {
                    return Err(LogViolation::LockAfterData {
                        seq: e.seq,
                        tx: e.tx,
                        doc: doc(),
                    });
                }
                if let Some(prev) = &t.last_locked {
                    if *prev >= doc() {
                        return Err(LogViolation::LockOrder {
                            seq: e.seq,
                            tx: e.tx,
                            doc: doc(),
                            prev: prev.clone(),
                        });
                    }
                }
                t.last_locked = Some(doc());
                t.held.insert(doc(), e.mode.unwrap_or(LockMode::Exclusive));
            }
            EventKind::Read | EventKind::Write => {
                if t.decided {
                    return Err(LogViolation::AfterOutcome {
                        seq: e.seq,
                        tx: e.tx,
                    });
                }
                t.touched_data = true;
                let needed = if e.event == EventKind::Write {
                    LockMode::Exclusive
                } else {
                    LockMode::Shared
                };
                if !t.held.get(&doc()).is_some_and(|m| m.covers(needed)) {
                    return Err(LogViolation::Unlocked {
                        seq: e.seq,
                        tx: e.tx,
                        doc: doc(),
                    });
                }
            }
            EventKind::Commit | EventKind::Abort => t.decided = true,
            EventKind::Release => {
                if !t.decided {
                    return Err(LogViolation::EarlyRelease {
                        seq: e.seq,
                        tx: e.tx,
                        doc: doc(),
                    });
                }
                t.held.remove(&doc());
            }
            _ => {}
        }
    }
    Ok(())
}

/// Replay the `state` annotations of each transaction through the legal
/// transition table, starting from `PENDING` at `INIT`.
pub fn audit_state_machine(events: &[LogEvent]) -> Result<(), LogViolation> {
    let mut states: HashMap<TxnId, TransactionState> = HashMap::new();
    for e in events {
        if e.event == EventKind::Init {
            if e.state != Some(TransactionState::Pending) || states.contains_key(&e.tx) {
                return Err(LogViolation::IllegalState {
                    seq: e.seq,
                    tx: e.tx,
                    from: states.get(&e.tx).copied(),
                    to: e.state.unwrap_or(TransactionState::Pending),
                });
            }
            states.insert(e.tx, TransactionState::Pending);
            continue;
        }
        let Some(cur) = states.get_mut(&e.tx) else {
            return Err(LogViolation::NoInit {
                seq: e.seq,
                tx: e.tx,
            });
        };
        if let Some(next) = e.state {
            if !cur.can_transition_to(next) {
                return Err(LogViolation::IllegalState {
                    seq: e.seq,
                    tx: e.tx,
                    from: Some(*cur),
                    to: next,
                });
            }
            *cur = next;
        } else if cur.is_terminal() && e.event != EventKind::Release {
            return Err(LogViolation::AfterOutcome {
                seq: e.seq,
                tx: e.tx,
            });
        }
    }
    Ok(())
}
