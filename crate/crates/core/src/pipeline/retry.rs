use std::collections::BTreeMap;

use parking_lot::Mutex;

use crate::clock::Timestamp;
use crate::context::TransactionContext;
use crate::types::TxnId;

/// Contexts parked until their wake instant. Entries leave in wake order,
/// ties broken by the transaction's start timestamp.
#[derive(Debug, Default)]
pub struct RetryQueue {
    entries: Mutex<BTreeMap<(Timestamp, Timestamp, TxnId), TransactionContext>>,
}

impl RetryQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(&self, wake: Timestamp, tc: TransactionContext) {
        self.entries
            .lock()
            .insert((wake, tc.timestamp(), tc.id()), tc);
    }

    /// Earliest entry whose wake instant has passed.
    pub fn pop_due(&self, now: Timestamp) -> Option<(Timestamp, TransactionContext)> {
        let mut entries = self.entries.lock();
        let first = entries.first_key_value().map(|(k, _)| *k)?;
        if first.0 > now {
            return None;
        }
        entries.remove(&first).map(|tc| (first.0, tc))
    }

    /// Reclaim a specific transaction's entry.
    pub fn take(&self, id: TxnId) -> Option<(Timestamp, TransactionContext)> {
        let mut entries = self.entries.lock();
        let key = *entries.keys().find(|k| k.2 == id)?;
        entries.remove(&key).map(|tc| (key.0, tc))
    }

    pub fn next_wake(&self) -> Option<Timestamp> {
        self.entries.lock().keys().next().map(|k| k.0)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tc(n: u8, ts: u64) -> TransactionContext {
        TransactionContext::new(
            TxnId::from_random_bytes([n; 16]),
            Timestamp(ts),
            "c",
            vec![],
            3,
        )
    }

    #[test]
    fn dequeues_in_wake_order_then_timestamp() {
        let q = RetryQueue::new();
        q.schedule(Timestamp(30), tc(1, 1));
        q.schedule(Timestamp(10), tc(2, 9));
        q.schedule(Timestamp(10), tc(3, 2));
        assert!(q.pop_due(Timestamp(5)).is_none());
        let order: Vec<u8> = std::iter::from_fn(|| q.pop_due(Timestamp(100)))
            .map(|(_, c)| c.id().as_u128().to_le_bytes()[0])
            .collect();
        assert_eq!(order, [3, 2, 1]);
    }

    #[test]
    fn take_by_id() {
        let q = RetryQueue::new();
        q.schedule(Timestamp(30), tc(1, 1));
        q.schedule(Timestamp(10), tc(2, 1));
        let id = TxnId::from_random_bytes([1; 16]);
        assert_eq!(q.take(id).unwrap().0, Timestamp(30));
        assert_eq!(q.len(), 1);
        assert!(q.take(id).is_none());
    }
}
