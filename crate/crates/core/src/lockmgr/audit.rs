use std::collections::{BTreeMap, HashMap};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{DocumentId, LockMode, TxnId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuditKind {
    Grant,
    Release,
    Expire,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub kind: AuditKind,
    pub doc: DocumentId,
    pub tx: TxnId,
    pub mode: Option<LockMode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditViolation {
    #[error("seq {seq}: {tx} granted {mode:?} on {doc} while held incompatibly by {other}")]
    Incompatible {
        seq: u64,
        doc: DocumentId,
        tx: TxnId,
        mode: LockMode,
        other: TxnId,
    },
    #[error("seq {seq}: {tx} released {doc} without holding it")]
    NotHeld {
        seq: u64,
        doc: DocumentId,
        tx: TxnId,
    },
    #[error("seq {seq}: {tx} acquired {doc} after {prev}, out of canonical order")]
    OutOfOrder {
        seq: u64,
        tx: TxnId,
        doc: DocumentId,
        prev: DocumentId,
    },
}

/// Ordered log of every grant and release made by a lock manager.
#[derive(Debug, Default)]
pub struct LockAudit {
    records: Mutex<Vec<AuditRecord>>,
}

impl LockAudit {
    pub(crate) fn record(
        &self,
        kind: AuditKind,
        doc: &DocumentId,
        tx: TxnId,
        mode: Option<LockMode>,
    ) {
        let mut records = self.records.lock();
        let seq = records.len() as u64;
        records.push(AuditRecord {
            seq,
            kind,
            doc: doc.clone(),
            tx,
            mode,
        });
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.records.lock().clone()
    }

    /// Replay the log: no grant may coexist with an incompatible holder and
    /// every release must match a prior grant.
    pub fn check_mutual_exclusion(&self) -> Result<(), AuditViolation> {
        let mut held: HashMap<DocumentId, BTreeMap<TxnId, LockMode>> = HashMap::new();
        for r in self.records.lock().iter() {
            let holders = held.entry(r.doc.clone()).or_default();
            match r.kind {
                AuditKind::Grant => {
                    let mode = r.mode.unwrap_or(LockMode::Exclusive);
                    if let Some((other, _)) = holders
                        .iter()
                        .find(|(t, m)| **t != r.tx && !m.compatible_with(mode))
                    {
                        return Err(AuditViolation::Incompatible {
                            seq: r.seq,
                            doc: r.doc.clone(),
                            tx: r.tx,
                            mode,
                            other: *other,
                        });
                    }
                    holders.insert(r.tx, mode);
                }
                AuditKind::Release | AuditKind::Expire => {
                    if holders.remove(&r.tx).is_none() {
                        return Err(AuditViolation::NotHeld {
                            seq: r.seq,
                            doc: r.doc.clone(),
                            tx: r.tx,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Each transaction's grants must come in strictly ascending document order.
    pub fn check_lock_order(&self) -> Result<(), AuditViolation> {
        let mut last: HashMap<TxnId, DocumentId> = HashMap::new();
        for r in self
            .records
            .lock()
            .iter()
            .filter(|r| r.kind == AuditKind::Grant)
        {
            if let Some(prev) = last.get(&r.tx) {
                if *prev >= r.doc {
                    return Err(AuditViolation::OutOfOrder {
                        seq: r.seq,
                        tx: r.tx,
                        doc: r.doc.clone(),
                        prev: prev.clone(),
                    });
                }
            }
            last.insert(r.tx, r.doc.clone());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tid(n: u8) -> TxnId {
        TxnId::from_random_bytes([n; 16])
    }

    #[test]
    fn detects_double_exclusive() {
        let audit = LockAudit::default();
        let d: DocumentId = "d".into();
        audit.record(AuditKind::Grant, &d, tid(1), Some(LockMode::Exclusive));
        audit.record(AuditKind::Grant, &d, tid(2), Some(LockMode::Shared));
        assert!(matches!(
            audit.check_mutual_exclusion(),
            Err(AuditViolation::Incompatible { seq: 1, .. })
        ));
    }

    #[test]
    fn detects_unsorted_acquisition() {
        let audit = LockAudit::default();
        audit.record(
            AuditKind::Grant,
            &"b".into(),
            tid(1),
            Some(LockMode::Exclusive),
        );
        audit.record(
            AuditKind::Grant,
            &"a".into(),
            tid(1),
            Some(LockMode::Exclusive),
        );
        assert!(matches!(
            audit.check_lock_order(),
            Err(AuditViolation::OutOfOrder { .. })
        ));
    }

    #[test]
    fn stray_release_flagged() {
        let audit = LockAudit::default();
        audit.record(AuditKind::Release, &"a".into(), tid(1), None);
        assert!(matches!(
            audit.check_mutual_exclusion(),
            Err(AuditViolation::NotHeld { .. })
        ));
    }
}
