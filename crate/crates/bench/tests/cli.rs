use std::path::Path;
use std::process::Command;

use doctxn::pipeline::events::write_jsonl;
use doctxn::pipeline::{EventKind, LogEvent};
use doctxn::types::{DocumentId, TxnId};

fn bench(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

fn event(seq: u64, tx: TxnId, kind: EventKind, doc: Option<&str>) -> LogEvent {
    let mut e = LogEvent::new(tx, kind);
    e.seq = seq;
    e.doc = doc.map(DocumentId::from);
    e
}

fn write_log(path: &Path, events: &[LogEvent]) {
    write_jsonl(events, std::fs::File::create(path).unwrap()).unwrap();
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bench(&[]).0, 1);
    assert_eq!(bench(&["run", "--clients", "many"]).0, 1);
    assert_eq!(bench(&["run", "--mode", "optimistic"]).0, 1);
    assert_eq!(
        bench(&["verify", "--history", "/nonexistent/events.jsonl"]).0,
        1
    );
    assert_eq!(
        bench(&[
            "sweep",
            "--param",
            "lock-timeout",
            "--values",
            "1",
            "--virtual-time"
        ])
        .0,
        1
    );
}

#[test]
fn run_writes_reports_and_events() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let (code, _) = bench(&[
        "run",
        "--workload",
        "f",
        "--clients",
        "4",
        "--ops",
        "200",
        "--trials",
        "2",
        "--warmup-ms",
        "0",
        "--virtual-time",
        "--read-latency-us",
        "100",
        "--write-latency-us",
        "100",
        "--records",
        "50",
        "--out",
        &p("r.json"),
        "--csv",
        &p("r.csv"),
        "--events",
        &p("ev.jsonl"),
        "--dump-store",
        &p("store.ndjson"),
    ]);
    assert_eq!(code, 0);
    let report = doctxn_bench::MetricsReport::read_json(&dir.path().join("r.json")).unwrap();
    assert_eq!(report.trial_count, 2);
    let csv_lines = std::fs::read_to_string(p("r.csv")).unwrap().lines().count();
    assert_eq!(
        csv_lines,
        1 + 2 * doctxn_bench::report::CSV_METRICS_PER_TRIAL
    );
    assert_eq!(
        std::fs::read_to_string(p("store.ndjson"))
            .unwrap()
            .lines()
            .count(),
        50
    );
    for t in 0..2 {
        let (code, out) = bench(&["verify", "--history", &p(&format!("ev.{t}.jsonl"))]);
        assert_eq!(code, 0);
        assert_eq!(out.trim(), r#"{"serializable":true,"cycle":null}"#);
    }
}

#[test]
fn properties_file_workload() {
    let dir = tempfile::tempdir().unwrap();
    let props = dir.path().join("w.properties");
    std::fs::write(
        &props,
        "readproportion=0.5\nupdateproportion=0.5\nrecordcount=20\n",
    )
    .unwrap();
    let (code, out) = bench(&[
        "run",
        "--workload",
        props.to_str().unwrap(),
        "--ops",
        "50",
        "--trials",
        "1",
        "--warmup-ms",
        "0",
        "--virtual-time",
        "--mode",
        "raw",
    ]);
    assert_eq!(code, 0);
    let report = doctxn_bench::MetricsReport::from_json(&out).unwrap();
    assert_eq!(report.config.workload.record_count, 20);
    assert_eq!(report.mode, doctxn_bench::Mode::RawStore);
}

#[test]
fn verify_flags_a_cycle_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let (a, b) = (
        TxnId::from_random_bytes([1; 16]),
        TxnId::from_random_bytes([2; 16]),
    );
    write_log(
        &path,
        &[
            event(1, a, EventKind::Read, Some("x")),
            event(2, b, EventKind::Write, Some("x")),
            event(3, b, EventKind::Read, Some("y")),
            event(4, a, EventKind::Write, Some("y")),
            event(5, a, EventKind::Commit, None),
            event(6, b, EventKind::Commit, None),
        ],
    );
    let (code, out) = bench(&["verify", "--history", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["serializable"], false);
    assert_eq!(v["cycle"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_writes_one_point_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.json");
    let (code, _) = bench(&[
        "sweep",
        "--param",
        "max-retries",
        "--values",
        "1,3,10",
        "--ops",
        "100",
        "--trials",
        "1",
        "--warmup-ms",
        "0",
        "--virtual-time",
        "--read-latency-us",
        "100",
        "--clients",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    let values: Vec<u64> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["value"].as_u64().unwrap())
        .collect();
    assert_eq!(values, vec![1, 3, 10]);
}
