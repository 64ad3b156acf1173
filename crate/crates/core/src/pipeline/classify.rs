use crate::context::{extract_read_set, extract_write_set, TransactionContext};
use crate::types::{LockMode, TransactionType};

/// Stage two: derive the transaction type, lock mode and read/write sets
/// from the operation list.
///
/// Mixed transactions are `HYBRID` and take the strictest mode; an empty
/// operation list falls through to `READ`.
pub fn classify(mut tc: TransactionContext) -> TransactionContext {
    let has_reads = tc.operations.iter().any(|op| op.kind().is_read());
    let has_writes = tc.operations.iter().any(|op| op.kind().is_write());

    if has_reads && has_writes {
        tc.txn_type = Some(TransactionType::Hybrid);
        tc.read_set = extract_read_set(&tc.operations);
        tc.write_set = extract_write_set(&tc.operations);
        tc.lock_mode = Some(LockMode::Exclusive);
    } else if has_writes {
        tc.txn_type = Some(TransactionType::Write);
        tc.read_set.clear();
        tc.write_set = extract_write_set(&tc.operations);
        tc.lock_mode = Some(LockMode::Exclusive);
    } else {
        tc.txn_type = Some(TransactionType::Read);
        tc.read_set = extract_read_set(&tc.operations);
        tc.write_set.clear();
        tc.lock_mode = Some(LockMode::Shared);
    }
    tc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::Timestamp;
    use crate::types::{DocumentId, FieldMap, FieldValue, Modify, Operation, TxnId};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn ctx(ops: Vec<Operation>) -> TransactionContext {
        TransactionContext::new(
            TxnId::from_random_bytes([3; 16]),
            Timestamp::ZERO,
            "c",
            ops,
            3,
        )
    }

    fn set(ids: &[&str]) -> BTreeSet<DocumentId> {
        ids.iter().map(|s| DocumentId::from(*s)).collect()
    }

    fn update(doc: &str) -> Operation {
        let mut f = FieldMap::new();
        f.insert("field0".into(), FieldValue::from("x"));
        Operation::update(doc, f).unwrap()
    }

    #[test]
    fn read_only() {
        let tc = classify(ctx(vec![Operation::read("d1"), Operation::read("d2")]));
        assert_eq!(tc.txn_type(), Some(TransactionType::Read));
        assert_eq!(tc.lock_mode(), Some(LockMode::Shared));
        assert_eq!(tc.read_set(), &set(&["d1", "d2"]));
        assert!(tc.write_set().is_empty());
    }

    #[test]
    fn write_only() {
        let tc = classify(ctx(vec![update("d1")]));
        assert_eq!(tc.txn_type(), Some(TransactionType::Write));
        assert_eq!(tc.lock_mode(), Some(LockMode::Exclusive));
        assert_eq!(tc.write_set(), &set(&["d1"]));
    }

    #[test]
    fn hybrid_takes_strictest_mode() {
        let tc = classify(ctx(vec![Operation::read("d1"), update("d2")]));
        assert_eq!(tc.txn_type(), Some(TransactionType::Hybrid));
        assert_eq!(tc.lock_mode(), Some(LockMode::Exclusive));
        assert_eq!(tc.read_set(), &set(&["d1"]));
        assert_eq!(tc.write_set(), &set(&["d2"]));
    }

    #[test]
    fn rmw_alone_is_hybrid() {
        let tc = classify(ctx(vec![Operation::read_modify_write(
            "d1",
            Modify::Increment {
                field: "n".into(),
                delta: 1,
            },
        )]));
        assert_eq!(tc.txn_type(), Some(TransactionType::Hybrid));
        assert_eq!(tc.read_set(), &set(&["d1"]));
        assert_eq!(tc.write_set(), &set(&["d1"]));
    }

    #[test]
    fn empty_is_read() {
        let tc = classify(ctx(vec![]));
        assert_eq!(tc.txn_type(), Some(TransactionType::Read));
        assert!(tc.read_set().is_empty() && tc.write_set().is_empty());
    }

    proptest! {
        #[test]
        fn classification_is_pure(kinds in proptest::collection::vec((0u8..3, 0u8..5), 0..12)) {
            let ops: Vec<Operation> = kinds.iter().map(|(k, d)| {
                let doc = format!("d{d}");
                match k {
                    0 => Operation::read(doc),
                    1 => update(&doc),
                    _ => Operation::read_modify_write(doc, Modify::Increment { field: "n".into(), delta: 1 }),
                }
            }).collect();
            let once = classify(ctx(ops));
            let twice = classify(once.clone());
            prop_assert_eq!(once, twice);
        }
    }
}
