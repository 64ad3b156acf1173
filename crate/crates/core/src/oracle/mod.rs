//! History capture and correctness checks.
//!
//! A [`History`] is the seq-ordered list of reads, writes, commits and
//! aborts. Committed transactions form a conflict graph with an edge
//! `T -> U` whenever an operation of `T` precedes a conflicting operation
//! of `U` (same document, at least one write). The history is conflict
//! serializable iff that graph is acyclic. Aborted transactions are left
//! out: their writes were undone and nothing they read survived.
//!
//! [`brute_force_serializable`] checks the same property straight from
//! the definition by trying every serial order, and exists to cross-check
//! the graph test on small histories.

mod audit;
mod deadlock;
mod history;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use audit::{audit_state_machine, audit_strict_2pl, LogViolation};
pub use deadlock::{
    check_deadlock_dissolution, cycle_spans, persistent_cycles, CycleSpan, WaitSample,
};
pub use history::{History, HistoryError, HistoryEvent, HistoryKind, HistoryRecorder};

use crate::graph::DiGraph;
use crate::types::{DocumentId, TxnId};

pub type ConflictGraph = DiGraph<TxnId>;

/// Largest number of committed transactions [`brute_force_serializable`] accepts.
pub const BRUTE_FORCE_LIMIT: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("brute-force check is limited to {limit} committed transactions, history has {count}")]
    TooManyTransactions { count: usize, limit: usize },
}

/// Every conflicting pair as an edge, over committed transactions.
pub fn build_conflict_graph(history: &History) -> ConflictGraph {
    let mut g = ConflictGraph::new();
    for tx in history.committed() {
        g.add_node(tx);
    }
    let mut per_doc: HashMap<&DocumentId, Vec<(TxnId, bool)>> = HashMap::new();
    for (tx, kind, doc) in history.committed_ops() {
        per_doc
            .entry(doc)
            .or_default()
            .push((*tx, kind == HistoryKind::Write));
    }
    for ops in per_doc.values() {
        for (i, (t, t_writes)) in ops.iter().enumerate() {
            for (u, u_writes) in &ops[i + 1..] {
                if t != u && (*t_writes || *u_writes) {
                    g.add_edge(*t, *u);
                }
            }
        }
    }
    g
}

/// A graph with the same reachability as [`build_conflict_graph`] but
/// linear in history length: each access only links to the last writer
/// of the document and, for writes, to the readers since that write.
pub fn reduced_conflict_graph(history: &History) -> ConflictGraph {
    #[derive(Default)]
    struct DocState {
        last_writer: Option<TxnId>,
        readers: BTreeSet<TxnId>,
    }
    let mut g = ConflictGraph::new();
    for tx in history.committed() {
        g.add_node(tx);
    }
    let mut docs: HashMap<&DocumentId, DocState> = HashMap::new();
    for (tx, kind, doc) in history.committed_ops() {
        let s = docs.entry(doc).or_default();
        if let Some(w) = s.last_writer {
            if w != *tx {
                g.add_edge(w, *tx);
            }
        }
        match kind {
            HistoryKind::Read => {
                s.readers.insert(*tx);
            }
            _ => {
                for r in std::mem::take(&mut s.readers) {
                    if r != *tx {
                        g.add_edge(r, *tx);
                    }
                }
                s.last_writer = Some(*tx);
            }
        }
    }
    g
}

pub fn is_conflict_serializable(history: &History) -> bool {
    reduced_conflict_graph(history).is_acyclic()
}

/// Oracle output: `{"serializable": bool, "cycle": [tx ids] | null}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub serializable: bool,
    pub cycle: Option<Vec<TxnId>>,
}

pub fn verdict(history: &History) -> Verdict {
    let cycle = reduced_conflict_graph(history).find_cycle();
    Verdict {
        serializable: cycle.is_none(),
        cycle,
    }
}

/// Search every serial order of the committed transactions for one that
/// keeps each conflicting pair in its history order.
pub fn brute_force_serializable(history: &History) -> Result<bool, OracleError> {
    let txs: Vec<TxnId> = history.committed().into_iter().collect();
    if txs.len() > BRUTE_FORCE_LIMIT {
        return Err(OracleError::TooManyTransactions {
            count: txs.len(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let index: BTreeMap<TxnId, usize> = txs.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let ops: Vec<(usize, bool, &DocumentId)> = history
        .committed_ops()
        .map(|(t, k, d)| (index[t], k == HistoryKind::Write, d))
        .collect();
    let mut must_precede = vec![vec![false; txs.len()]; txs.len()];
    for (i, (t, tw, d)) in ops.iter().enumerate() {
        for (u, uw, e) in &ops[i + 1..] {
            if t != u && d == e && (*tw || *uw) {
                must_precede[*t][*u] = true;
            }
        }
    }
    let mut order: Vec<usize> = (0..txs.len()).collect();
    Ok(permutations_any(&mut order, 0, &|perm| {
        let mut pos = vec![0; perm.len()];
        for (p, t) in perm.iter().enumerate() {
            pos[*t] = p;
        }
        (0..perm.len()).all(|t| (0..perm.len()).all(|u| !must_precede[t][u] || pos[t] < pos[u]))
    }))
}

fn permutations_any(items: &mut [usize], k: usize, accept: &dyn Fn(&[usize]) -> bool) -> bool {
    if k == items.len() {
        return accept(items);
    }
    for i in k..items.len() {
        items.swap(k, i);
        if permutations_any(items, k + 1, accept) {
            items.swap(k, i);
            return true;
        }
        items.swap(k, i);
    }
    false
}

#[cfg(test)]
mod tests;
