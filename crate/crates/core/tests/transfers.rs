//! Concurrent transfers through the full pipeline: money is conserved, the
//! event log is conflict-serializable and passes the audits, and the lock
//! table drains.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use doctxn::clock::{RealClock, SharedClock, Timestamp, VirtualClock};
use doctxn::lockmgr::LockManager;
use doctxn::oracle::{self, History};
use doctxn::pipeline::{EventLog, Pipeline, PipelineConfig, RunStep, TransactionRequest};
use doctxn::store::{DocumentStore, LatencyProfile, MemoryStore};
use doctxn::types::{FieldValue, Modify, Operation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ACCOUNTS: usize = 6;

fn account(i: usize) -> String {
    format!("acct{i}")
}

fn seeded_store(store: &MemoryStore) {
    for i in 0..ACCOUNTS {
        let fields = BTreeMap::from([("balance".to_string(), FieldValue::from_i64(100))]);
        store
            .write(&Operation::insert(account(i), fields).unwrap())
            .unwrap();
    }
}

fn transfer(rng: &mut ChaCha8Rng) -> Vec<Operation> {
    let from = rng.gen_range(0..ACCOUNTS);
    let to = (from + rng.gen_range(1..ACCOUNTS)) % ACCOUNTS;
    let amount = rng.gen_range(1..10);
    let delta = |d| Modify::Increment {
        field: "balance".into(),
        delta: d,
    };
    vec![
        Operation::read_modify_write(account(from), delta(-amount)),
        Operation::read_modify_write(account(to), delta(amount)),
    ]
}

fn total(store: &MemoryStore) -> i64 {
    store
        .snapshot()
        .values()
        .map(|d| d.fields["balance"].as_i64().unwrap())
        .sum()
}

fn pipeline(clock: SharedClock, store: Arc<MemoryStore>, seed: u64) -> (Pipeline, Arc<EventLog>) {
    let config = PipelineConfig {
        id_seed: Some(seed),
        ..PipelineConfig::default()
    };
    let log = Arc::new(EventLog::new(clock.clone()));
    let locks = Arc::new(LockManager::new(clock.clone()).with_audit());
    let p = Pipeline::new(config, store, clock)
        .unwrap()
        .with_lock_manager(locks)
        .with_event_log(log.clone());
    (p, log)
}

fn check_log(p: &Pipeline, log: &EventLog) {
    let events = log.events();
    let history = History::from_log(&events).unwrap();
    assert!(oracle::is_conflict_serializable(&history));
    assert!(oracle::build_conflict_graph(&history).is_acyclic());
    oracle::audit_strict_2pl(&events).unwrap();
    oracle::audit_state_machine(&events).unwrap();
    p.locks().audit().unwrap().check_mutual_exclusion().unwrap();
    assert!(p.locks().is_empty());
    assert_eq!(p.active_count(), 0);
}

#[test]
fn threaded_transfers_conserve_money() {
    let clock: SharedClock = Arc::new(RealClock::new());
    let latency = LatencyProfile::fixed(Duration::from_micros(20), Duration::from_micros(20));
    let store = Arc::new(MemoryStore::with_latency(latency, clock.clone()));
    seeded_store(&store);
    let (p, log) = pipeline(clock, store.clone(), 5);
    let committed: usize = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|w| {
                let p = &p;
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(w);
                    (0..150)
                        .filter(|_| {
                            p.run_transaction(TransactionRequest::new(transfer(&mut rng)))
                                .unwrap()
                                .committed()
                        })
                        .count()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).sum()
    });
    assert!(committed > 0);
    assert_eq!(total(&store), 100 * ACCOUNTS as i64);
    check_log(&p, &log);
}

#[test]
fn simulated_interleaving_is_serializable() {
    let vclock = VirtualClock::new();
    let clock: SharedClock = Arc::new(vclock.clone());
    let latency = LatencyProfile::fixed(Duration::from_millis(1), Duration::from_millis(2));
    let store = Arc::new(MemoryStore::with_latency(latency, clock.clone()));
    seeded_store(&store);
    let (p, log) = pipeline(clock.clone(), store.clone(), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut runs: Vec<_> = (0..40)
        .map(|_| {
            p.start(TransactionRequest::new(transfer(&mut rng)))
                .unwrap()
        })
        .collect();
    let mut wake = vec![Timestamp::ZERO; runs.len()];
    let mut done = vec![false; runs.len()];
    while done.iter().any(|d| !d) {
        let next = (0..runs.len())
            .filter(|&i| !done[i])
            .min_by_key(|&i| (wake[i], i))
            .unwrap();
        vclock.advance_to(wake[next]);
        p.locks().expire_deadlines(clock.now());
        match p.poll(&mut runs[next]).unwrap() {
            RunStep::WaitUntil(t) => wake[next] = t,
            RunStep::Done(_) => done[next] = true,
        }
    }
    assert_eq!(total(&store), 100 * ACCOUNTS as i64);
    check_log(&p, &log);
}

#[test]
fn store_dump_round_trips() {
    let store = MemoryStore::new();
    seeded_store(&store);
    let mut buf = Vec::new();
    store.dump_ndjson(&mut buf).unwrap();
    assert_eq!(String::from_utf8_lossy(&buf).lines().count(), ACCOUNTS);
    let copy = MemoryStore::new();
    assert_eq!(copy.load_ndjson(buf.as_slice()).unwrap(), ACCOUNTS);
    assert_eq!(copy.snapshot(), store.snapshot());
}
