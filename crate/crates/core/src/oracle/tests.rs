use std::time::Duration;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::clock::Timestamp;
use crate::lockmgr::WaitGraph;
use crate::pipeline::{EventKind, LogEvent};
use crate::types::{LockMode, TransactionState};

fn t(n: u8) -> TxnId {
    TxnId::from_random_bytes([n; 16])
}

fn history(events: Vec<HistoryEvent>) -> History {
    let mut h = History::new();
    for e in events {
        h.record(e).unwrap();
    }
    h
}

fn cyclic() -> History {
    history(vec![
        HistoryEvent::write(1, t(1), "x"),
        HistoryEvent::write(2, t(2), "y"),
        HistoryEvent::write(3, t(2), "x"),
        HistoryEvent::write(4, t(1), "y"),
        HistoryEvent::commit(5, t(1)),
        HistoryEvent::commit(6, t(2)),
    ])
}

#[test]
fn record_accepts_first_and_rejects_regressions() {
    let mut h = History::new();
    h.record(HistoryEvent::read(1, t(1), "x")).unwrap();
    h.record(HistoryEvent::read(7, t(1), "x")).unwrap();
    assert_eq!(
        h.record(HistoryEvent::read(5, t(1), "x")),
        Err(HistoryError::OutOfOrder { last: 7, got: 5 })
    );
    h.record(HistoryEvent::commit(8, t(1))).unwrap();
    assert!(matches!(
        h.record(HistoryEvent::read(9, t(1), "x")),
        Err(HistoryError::AfterOutcome { .. })
    ));
}

#[test]
fn recorder_sequences_appends() {
    let r = HistoryRecorder::new();
    assert_eq!(
        r.append(t(1), HistoryKind::Write, Some("x".into()))
            .unwrap(),
        1
    );
    assert_eq!(r.append(t(1), HistoryKind::Commit, None).unwrap(), 2);
    assert_eq!(r.snapshot().len(), 2);
    assert!(r.append(t(2), HistoryKind::Read, None).is_err());
}

#[test]
fn serial_write_then_read_has_one_edge() {
    let h = history(vec![
        HistoryEvent::write(1, t(1), "x"),
        HistoryEvent::commit(2, t(1)),
        HistoryEvent::read(3, t(2), "x"),
        HistoryEvent::commit(4, t(2)),
    ]);
    let g = build_conflict_graph(&h);
    assert_eq!(g.edges().len(), 1);
    assert!(g.has_edge(&t(1), &t(2)));
    assert!(is_conflict_serializable(&h));
    assert!(brute_force_serializable(&h).unwrap());
}

#[test]
fn readers_do_not_conflict() {
    let h = history(vec![
        HistoryEvent::read(1, t(1), "x"),
        HistoryEvent::read(2, t(2), "x"),
        HistoryEvent::read(3, t(1), "y"),
        HistoryEvent::read(4, t(2), "y"),
        HistoryEvent::commit(5, t(1)),
        HistoryEvent::commit(6, t(2)),
    ]);
    assert!(build_conflict_graph(&h).is_empty());
}

#[test]
fn opposite_write_orders_form_a_cycle() {
    let h = cyclic();
    let g = build_conflict_graph(&h);
    assert!(g.has_edge(&t(1), &t(2)) && g.has_edge(&t(2), &t(1)));
    assert!(!is_conflict_serializable(&h));
    assert!(!brute_force_serializable(&h).unwrap());
    let v = verdict(&h);
    assert!(!v.serializable);
    let mut cycle = v.cycle.clone().unwrap();
    cycle.sort();
    assert_eq!(cycle, vec![t(1), t(2)]);
}

#[test]
fn empty_history_is_serializable() {
    let h = History::new();
    assert!(is_conflict_serializable(&h));
    assert_eq!(
        serde_json::to_string(&verdict(&h)).unwrap(),
        r#"{"serializable":true,"cycle":null}"#
    );
}

#[test]
fn aborted_transactions_are_ignored() {
    let mut events = cyclic().events().to_vec();
    events[5] = HistoryEvent::abort(6, t(2));
    let h = history(events);
    assert!(is_conflict_serializable(&h));
    assert_eq!(build_conflict_graph(&h).nodes().len(), 1);
}

#[test]
fn brute_force_refuses_large_histories() {
    let events = (0..7u8)
        .flat_map(|i| {
            let s = i as u64 * 2;
            [
                HistoryEvent::write(s + 1, t(i), "x"),
                HistoryEvent::commit(s + 2, t(i)),
            ]
        })
        .collect();
    let err = brute_force_serializable(&history(events)).unwrap_err();
    assert_eq!(err, OracleError::TooManyTransactions { count: 7, limit: 6 });
    assert!(err.to_string().contains("limited to 6"));
}

/// Random interleaving of up to `max_tx` transactions over `docs` documents.
fn random_history(rng: &mut impl Rng, max_tx: u8, docs: u8) -> History {
    let n = rng.gen_range(1..=max_tx);
    let mut scripts: Vec<Vec<HistoryEvent>> = (0..n)
        .map(|i| {
            let len = rng.gen_range(1..=4);
            let mut ops: Vec<HistoryEvent> = (0..len)
                .map(|_| {
                    let doc = format!("d{}", rng.gen_range(0..docs));
                    if rng.gen_bool(0.5) {
                        HistoryEvent::read(0, t(i), doc)
                    } else {
                        HistoryEvent::write(0, t(i), doc)
                    }
                })
                .collect();
            ops.push(if rng.gen_bool(0.85) {
                HistoryEvent::commit(0, t(i))
            } else {
                HistoryEvent::abort(0, t(i))
            });
            ops.reverse();
            ops
        })
        .collect();
    let mut h = History::new();
    let mut seq = 0;
    while scripts.iter().any(|s| !s.is_empty()) {
        let live: Vec<usize> = (0..scripts.len())
            .filter(|i| !scripts[*i].is_empty())
            .collect();
        let pick = live[rng.gen_range(0..live.len())];
        let mut e = scripts[pick].pop().unwrap();
        seq += 1;
        e.seq = seq;
        h.record(e).unwrap();
    }
    h
}

#[test]
fn graph_test_agrees_with_brute_force_on_ten_thousand_histories() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cyclic = 0;
    for _ in 0..10_000 {
        let h = random_history(&mut rng, 6, 4);
        let fast = is_conflict_serializable(&h);
        assert_eq!(fast, brute_force_serializable(&h).unwrap(), "{h:?}");
        assert_eq!(fast, build_conflict_graph(&h).is_acyclic());
        cyclic += usize::from(!fast);
    }
    // Both verdicts must actually occur for the comparison to mean anything.
    assert!(cyclic > 100 && cyclic < 9_900, "{cyclic}");
}

proptest! {
    #[test]
    fn oracles_agree(seed in any::<u64>()) {
        let h = random_history(&mut ChaCha8Rng::seed_from_u64(seed), 6, 4);
        prop_assert_eq!(is_conflict_serializable(&h), brute_force_serializable(&h).unwrap());
    }

    #[test]
    fn reduced_graph_is_a_subgraph_with_equal_acyclicity(seed in any::<u64>()) {
        let h = random_history(&mut ChaCha8Rng::seed_from_u64(seed), 8, 3);
        let full = build_conflict_graph(&h);
        let reduced = reduced_conflict_graph(&h);
        prop_assert!(reduced.edges().is_subset(full.edges()));
        prop_assert_eq!(full.is_acyclic(), reduced.is_acyclic());
    }

    #[test]
    fn trailing_reader_keeps_acyclic_history_acyclic(seed in any::<u64>(), docs in proptest::collection::btree_set(0u8..4, 1..4)) {
        let h = random_history(&mut ChaCha8Rng::seed_from_u64(seed), 6, 4);
        prop_assume!(is_conflict_serializable(&h));
        let mut extended = h.clone();
        let mut seq = h.events().last().map_or(0, |e| e.seq);
        for d in docs {
            seq += 1;
            extended.record(HistoryEvent::read(seq, t(200), format!("d{d}"))).unwrap();
        }
        extended.record(HistoryEvent::commit(seq + 1, t(200))).unwrap();
        prop_assert!(is_conflict_serializable(&extended));
    }
}

fn sample(ms: u64, edges: &[(u8, u8)]) -> WaitSample {
    let mut graph = WaitGraph::new();
    for (a, b) in edges {
        graph.add_edge(t(*a), t(*b));
    }
    WaitSample {
        at: Timestamp::from_millis(ms),
        graph,
    }
}

#[test]
fn acyclic_samples_dissolve() {
    let samples: Vec<_> = (0..50).map(|i| sample(i * 10, &[(1, 2), (2, 3)])).collect();
    assert!(check_deadlock_dissolution(
        &samples,
        Duration::from_millis(100)
    ));
}

#[test]
fn transient_cycle_is_allowed() {
    let samples = vec![
        sample(0, &[]),
        sample(10, &[(1, 2), (2, 1)]),
        sample(20, &[(1, 2)]),
    ];
    assert!(check_deadlock_dissolution(
        &samples,
        Duration::from_millis(100)
    ));
    assert_eq!(cycle_spans(&samples).len(), 1);
}

#[test]
fn cycle_held_for_three_timeouts_is_flagged() {
    let samples: Vec<_> = (0..=30)
        .map(|i| sample(i * 10, &[(1, 2), (2, 1)]))
        .collect();
    assert!(!check_deadlock_dissolution(
        &samples,
        Duration::from_millis(100)
    ));
    let spans = persistent_cycles(&samples, Duration::from_millis(100));
    assert_eq!(spans.len(), 1);
    assert_eq!(spans[0].duration(), Duration::from_millis(300));
}

#[test]
fn interrupted_cycle_restarts_its_span() {
    let mut samples: Vec<_> = (0..=8).map(|i| sample(i * 10, &[(1, 2), (2, 1)])).collect();
    samples.push(sample(90, &[]));
    samples.extend((10..=18).map(|i| sample(i * 10, &[(1, 2), (2, 1)])));
    assert!(check_deadlock_dissolution(
        &samples,
        Duration::from_millis(100)
    ));
    assert_eq!(cycle_spans(&samples).len(), 2);
}

fn ev(seq: u64, tx: u8, kind: EventKind, doc: Option<&str>) -> LogEvent {
    let mut e = LogEvent::new(t(tx), kind);
    e.seq = seq;
    e.doc = doc.map(DocumentId::from);
    if kind == EventKind::Locked {
        e.mode = Some(LockMode::Exclusive);
    }
    e
}

#[test]
fn audit_accepts_strict_shape() {
    let log = vec![
        ev(1, 1, EventKind::Locked, Some("a")),
        ev(2, 1, EventKind::Locked, Some("b")),
        ev(3, 1, EventKind::Write, Some("a")),
        ev(4, 1, EventKind::Read, Some("b")),
        ev(5, 1, EventKind::Commit, None),
        ev(6, 1, EventKind::Release, Some("b")),
        ev(7, 1, EventKind::Release, Some("a")),
    ];
    audit_strict_2pl(&log).unwrap();
}

#[test]
fn audit_flags_early_release_and_late_lock() {
    let early = vec![
        ev(1, 1, EventKind::Locked, Some("a")),
        ev(2, 1, EventKind::Write, Some("a")),
        ev(3, 1, EventKind::Release, Some("a")),
        ev(4, 1, EventKind::Commit, None),
    ];
    assert!(matches!(
        audit_strict_2pl(&early),
        Err(LogViolation::EarlyRelease { .. })
    ));
    let late = vec![
        ev(1, 1, EventKind::Locked, Some("a")),
        ev(2, 1, EventKind::Write, Some("a")),
        ev(3, 1, EventKind::Locked, Some("b")),
    ];
    assert!(matches!(
        audit_strict_2pl(&late),
        Err(LogViolation::LockAfterData { .. })
    ));
    let unlocked = vec![ev(1, 1, EventKind::Write, Some("a"))];
    assert!(matches!(
        audit_strict_2pl(&unlocked),
        Err(LogViolation::Unlocked { .. })
    ));
    let unsorted = vec![
        ev(1, 1, EventKind::Locked, Some("b")),
        ev(2, 1, EventKind::Locked, Some("a")),
    ];
    assert!(matches!(
        audit_strict_2pl(&unsorted),
        Err(LogViolation::LockOrder { .. })
    ));
}

#[test]
fn state_audit_follows_transition_table() {
    let with_state = |seq, kind, state| {
        let mut e = ev(seq, 1, kind, None);
        e.state = Some(state);
        e
    };
    let good = vec![
        with_state(1, EventKind::Init, TransactionState::Pending),
        with_state(2, EventKind::Ready, TransactionState::Ready),
        with_state(3, EventKind::Execute, TransactionState::Executing),
        with_state(4, EventKind::Commit, TransactionState::Committed),
    ];
    audit_state_machine(&good).unwrap();
    let bad = vec![
        with_state(1, EventKind::Init, TransactionState::Pending),
        with_state(2, EventKind::Commit, TransactionState::Committed),
    ];
    assert!(matches!(
        audit_state_machine(&bad),
        Err(LogViolation::IllegalState { .. })
    ));
    assert!(matches!(
        audit_state_machine(&[ev(1, 1, EventKind::Read, Some("a"))]),
        Err(LogViolation::NoInit { .. })
    ));
}
