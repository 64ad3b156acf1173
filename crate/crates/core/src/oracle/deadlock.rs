use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::lockmgr::WaitGraph;
use crate::types::TxnId;

/// One wait-for graph observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaitSample {
    pub at: Timestamp,
    pub graph: WaitGraph,
}

/// A cycle (identified by its node set) seen in consecutive samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleSpan {
    pub nodes: BTreeSet<TxnId>,
    pub first_seen: Timestamp,
    pub last_seen: Timestamp,
}

impl CycleSpan {
    pub fn duration(&self) -> Duration {
        self.last_seen - self.first_seen
    }
}

/// Every maximal run of consecutive samples sharing a cyclic component.
pub fn cycle_spans(samples: &[WaitSample]) -> Vec<CycleSpan> {
    let mut open: BTreeMap<BTreeSet<TxnId>, (Timestamp, Timestamp)> = BTreeMap::new();
    let mut closed = Vec::new();
    for s in samples {
        let present: BTreeSet<BTreeSet<TxnId>> = s.graph.cyclic_components().into_iter().collect();
        let gone: Vec<_> = open
            .keys()
            .filter(|k| !present.contains(*k))
            .cloned()
            .collect();
        for nodes in gone {
            let (first_seen, last_seen) = open.remove(&nodes).expect("open span");
            closed.push(CycleSpan {
                nodes,
                first_seen,
                last_seen,
            });
        }
        for nodes in present {
            open.entry(nodes).or_insert((s.at, s.at)).1 = s.at;
        }
    }
    closed.extend(
        open.into_iter()
            .map(|(nodes, (first_seen, last_seen))| CycleSpan {
                nodes,
                first_seen,
                last_seen,
            }),
    );
    closed.sort_by_key(|c| c.first_seen);
    closed
}

/// Cycles that stayed in place for longer than `timeout`.
pub fn persistent_cycles(samples: &[WaitSample], timeout: Duration) -> Vec<CycleSpan> {
    cycle_spans(samples)
        .into_iter()
        .filter(|c| c.duration() > timeout)
        .collect()
}

/// True when no wait-for cycle persisted across samples spanning more
/// than `timeout`.
pub fn check_deadlock_dissolution(samples: &[WaitSample], timeout: Duration) -> bool {
    persistent_cycles(samples, timeout).is_empty()
}
