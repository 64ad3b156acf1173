//! The per-transaction lifecycle record.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::types::{DocumentId, LockMode, Operation, TransactionState, TransactionType, TxnId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal state transition {from:?} -> {to:?} for {tx}")]
pub struct IllegalTransition {
    pub tx: TxnId,
    pub from: TransactionState,
    pub to: TransactionState,
}

/// Everything the pipeline knows about one transaction.
///
/// A context is owned by exactly one worker at a time. Classification
/// fields (`txn_type`, `lock_mode`, the read and write sets) are `None` or
/// empty until stage two has run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionContext {
    pub(crate) id: TxnId,
    pub(crate) timestamp: Timestamp,
    pub(crate) state: TransactionState,
    pub(crate) client_id: String,
    pub(crate) retry_count: u32,
    pub(crate) max_retries: u32,
    pub(crate) txn_type: Option<TransactionType>,
    pub(crate) operations: Vec<Operation>,
    pub(crate) read_set: BTreeSet<DocumentId>,
    pub(crate) write_set: BTreeSet<DocumentId>,
    pub(crate) lock_mode: Option<LockMode>,
    pub(crate) conflict_timestamp: Option<Timestamp>,
    pub(crate) acquired_locks: Vec<(DocumentId, LockMode)>,
}

impl TransactionContext {
    pub fn new(
        id: TxnId,
        timestamp: Timestamp,
        client_id: impl Into<String>,
        operations: Vec<Operation>,
        max_retries: u32,
    ) -> Self {
        TransactionContext {
            id,
            timestamp,
            state: TransactionState::Pending,
            client_id: client_id.into(),
            retry_count: 0,
            max_retries,
            txn_type: None,
            operations,
            read_set: BTreeSet::new(),
            write_set: BTreeSet::new(),
            lock_mode: None,
            conflict_timestamp: None,
            acquired_locks: Vec::new(),
        }
    }

    pub fn id(&self) -> TxnId {
        self.id
    }

    pub fn timestamp(&self) -> Timestamp {
        self.timestamp
    }

    pub fn state(&self) -> TransactionState {
        self.state
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn retry_count(&self) -> u32 {
        self.retry_count
    }

    pub fn max_retries(&self) -> u32 {
        self.max_retries
    }

    pub fn txn_type(&self) -> Option<TransactionType> {
        self.txn_type
    }

    pub fn operations(&self) -> &[Operation] {
        &self.operations
    }

    pub fn read_set(&self) -> &BTreeSet<DocumentId> {
        &self.read_set
    }

    pub fn write_set(&self) -> &BTreeSet<DocumentId> {
        &self.write_set
    }

    pub fn lock_mode(&self) -> Option<LockMode> {
        self.lock_mode
    }

    pub fn conflict_timestamp(&self) -> Option<Timestamp> {
        self.conflict_timestamp
    }

    pub fn acquired_locks(&self) -> &[(DocumentId, LockMode)] {
        &self.acquired_locks
    }

    pub fn is_classified(&self) -> bool {
        self.txn_type.is_some()
    }

    /// Move to `to`, rejecting anything outside the legal transition table.
    pub fn transition(&mut self, to: TransactionState) -> Result<(), IllegalTransition> {
        if !self.state.can_transition_to(to) {
            return Err(IllegalTransition {
                tx: self.id,
                from: self.state,
                to,
            });
        }
        self.state = to;
        Ok(())
    }

    pub(crate) fn increment_retry(&mut self) {
        debug_assert!(self.retry_count < self.max_retries);
        self.retry_count += 1;
    }
}

/// Documents touched by read-class operations.
pub fn extract_read_set(ops: &[Operation]) -> BTreeSet<DocumentId> {
    ops.iter()
        .filter(|op| op.kind().is_read())
        .map(|op| op.doc().clone())
        .collect()
}

/// Documents touched by write-class operations.
pub fn extract_write_set(ops: &[Operation]) -> BTreeSet<DocumentId> {
    ops.iter()
        .filter(|op| op.kind().is_write())
        .map(|op| op.doc().clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{FieldMap, FieldValue, Modify};
    use proptest::prelude::*;

    fn ctx() -> TransactionContext {
        TransactionContext::new(
            TxnId::from_random_bytes([1; 16]),
            Timestamp(5),
            "c",
            vec![],
            3,
        )
    }

    #[test]
    fn fresh_context_is_pending() {
        let tc = ctx();
        assert_eq!(tc.state(), TransactionState::Pending);
        assert_eq!(tc.retry_count(), 0);
        assert!(!tc.is_classified());
    }

    #[test]
    fn illegal_transition_is_rejected_and_state_kept() {
        let mut tc = ctx();
        let err = tc.transition(TransactionState::Committed).unwrap_err();
        assert_eq!(err.from, TransactionState::Pending);
        assert_eq!(tc.state(), TransactionState::Pending);
    }

    #[test]
    fn rmw_lands_in_both_sets() {
        let mut fields = FieldMap::new();
        fields.insert("f".into(), FieldValue::from("v"));
        let ops = vec![
            Operation::read("a"),
            Operation::update("b", fields).unwrap(),
            Operation::read_modify_write(
                "c",
                Modify::Increment {
                    field: "n".into(),
                    delta: 1,
                },
            ),
        ];
        let reads: Vec<_> = extract_read_set(&ops)
            .into_iter()
            .map(|d| d.to_string())
            .collect();
        let writes: Vec<_> = extract_write_set(&ops)
            .into_iter()
            .map(|d| d.to_string())
            .collect();
        assert_eq!(reads, ["a", "c"]);
        assert_eq!(writes, ["b", "c"]);
    }

    fn arb_state() -> impl Strategy<Value = TransactionState> {
        prop_oneof![
            Just(TransactionState::Pending),
            Just(TransactionState::Ready),
            Just(TransactionState::Executing),
            Just(TransactionState::Committed),
            Just(TransactionState::Aborted),
        ]
    }

    proptest! {
        // Random event streams: every accepted transition is in the legal table,
        // every rejected one leaves the state untouched.
        #[test]
        fn state_machine_fuzz(events in proptest::collection::vec(arb_state(), 0..40)) {
            let mut tc = ctx();
            for to in events {
                let before = tc.state();
                match tc.transition(to) {
                    Ok(()) => prop_assert!(before.can_transition_to(to)),
                    Err(_) => {
                        prop_assert!(!before.can_transition_to(to));
                        prop_assert_eq!(tc.state(), before);
                    }
                }
            }
        }

        #[test]
        fn set_extraction_is_pure(docs in proptest::collection::vec((0u8..4, 0usize..6), 0..20)) {
            let ops: Vec<Operation> = docs.iter().map(|(k, d)| {
                let doc = format!("d{d}");
                match k {
                    0 => Operation::read(doc),
                    1 => Operation::delete(doc),
                    2 => Operation::read_modify_write(doc, Modify::Increment { field: "n".into(), delta: 1 }),
                    _ => {
                        let mut f = FieldMap::new();
                        f.insert("x".into(), FieldValue::from("1"));
                        Operation::update(doc, f).unwrap()
                    }
                }
            }).collect();
            prop_assert_eq!(extract_read_set(&ops), extract_read_set(&ops));
            prop_assert_eq!(extract_write_set(&ops), extract_write_set(&ops));
        }
    }
}
