//! Per-trial statistics computed from the full set of recorded samples.

use std::collections::BTreeMap;
use std::time::Duration;

use doctxn::lockmgr::LockStats;
use doctxn::oracle::Verdict;
use doctxn::pipeline::{ExecutionResult, FailureReason, StageTimings};
use serde::{Deserialize, Serialize};

use crate::engine::{OpClass, Sample};

/// Latency summary in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub mean: f64,
    pub stddev: f64,
    pub p50: f64,
    pub p99: f64,
}

impl LatencyStats {
    /// Population standard deviation; nearest-rank percentiles.
    pub fn from_durations(samples: &[Duration]) -> Self {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let n = ms.len() as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        LatencyStats {
            count: ms.len() as u64,
            mean,
            stddev: var.sqrt(),
            p50: percentile(&ms, 0.50),
            p99: percentile(&ms, 0.99),
        }
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub const CLASS_READ: &str = "read";
pub const CLASS_UPDATE: &str = "update";
pub const CLASS_ALL: &str = "all";

/// Oracle and audit results over one trial's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correctness {
    pub verdict: Verdict,
    /// First strict two-phase locking violation, if any.
    pub s2pl_violation: Option<String>,
    /// First illegal state transition, if any.
    pub state_violation: Option<String>,
    /// First overlap of incompatible grants, if any.
    pub exclusion_violation: Option<String>,
    pub events: u64,
}

impl Correctness {
    pub fn passed(&self) -> bool {
        self.verdict.serializable
            && self.s2pl_violation.is_none()
            && self.state_violation.is_none()
            && self.exclusion_violation.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: u32,
    pub seed: u64,
    pub transactions: u64,
    pub committed: u64,
    pub failed: u64,
    /// Length of the measured phase in seconds.
    pub elapsed: f64,
    pub throughput: f64,
    pub abort_rate: f64,
    pub conflict_rate: f64,
    pub deadlock_count: u64,
    pub latency: BTreeMap<String, LatencyStats>,
    /// Mean lock-acquisition wait per transaction, in milliseconds.
    pub avg_lock_wait: f64,
    pub retry_histogram: BTreeMap<u32, u64>,
    pub failure_reasons: BTreeMap<FailureReason, u64>,
    pub overhead_breakdown: BTreeMap<String, f64>,
    pub lock_stats: Option<LockStats>,
    pub expired_grants: u64,
    pub lock_table_empty: bool,
    pub correctness: Option<Correctness>,
}

impl TrialMetrics {
    /// Summarize the measured samples of one trial.
    pub fn from_samples(trial: u32, seed: u64, samples: &[Sample], elapsed: Duration) -> Self {
        let transactions = samples.len() as u64;
        let committed = samples.iter().filter(|s| s.committed()).count() as u64;
        let failed = transactions - committed;
        let ratio = |n: u64| {
            if transactions == 0 {
                0.0
            } else {
                n as f64 / transactions as f64
            }
        };
        let secs = elapsed.as_secs_f64();

        let mut latency = BTreeMap::new();
        for (name, class) in [
            (CLASS_READ, Some(OpClass::Read)),
            (CLASS_UPDATE, Some(OpClass::Update)),
            (CLASS_ALL, None),
        ] {
            let d: Vec<Duration> = samples
                .iter()
                .filter(|s| class.is_none_or(|c| s.class == c))
                .map(Sample::latency)
                .collect();
            latency.insert(name.to_string(), LatencyStats::from_durations(&d));
        }

        let mut retry_histogram = BTreeMap::new();
        let mut failure_reasons = BTreeMap::new();
        let mut stages = StageTimings::default();
        let mut total_latency = Duration::ZERO;
        let mut lock_wait = Duration::ZERO;
        for s in samples {
            *retry_histogram.entry(s.retries).or_insert(0) += 1;
            if let ExecutionResult::Failure(r) = s.result {
                *failure_reasons.entry(r).or_insert(0) += 1;
            }
            stages.add(&s.timings);
            total_latency += s.latency();
            lock_wait += s.lock_wait;
        }

        TrialMetrics {
            trial,
            seed,
            transactions,
            committed,
            failed,
            elapsed: secs,
            throughput: if secs > 0.0 {
                committed as f64 / secs
            } else {
                0.0
            },
            abort_rate: ratio(failed),
            conflict_rate: ratio(samples.iter().filter(|s| s.saw_conflict).count() as u64),
            deadlock_count: 0,
            latency,
            avg_lock_wait: if transactions == 0 {
                0.0
            } else {
                lock_wait.as_secs_f64() * 1e3 / transactions as f64
            },
            retry_histogram,
            failure_reasons,
            overhead_breakdown: stage_fractions(&stages, total_latency),
            lock_stats: None,
            expired_grants: 0,
            lock_table_empty: true,
            correctness: None,
        }
    }
}

/// Each stage's share of the summed end-to-end latency.
pub fn stage_fractions(stages: &StageTimings, total: Duration) -> BTreeMap<String, f64> {
    let t = total.as_secs_f64();
    let frac = |d: Duration| if t > 0.0 { d.as_secs_f64() / t } else { 0.0 };
    [
        ("init", stages.init),
        ("classify", stages.classify),
        ("assess", stages.assess),
        ("retry_wait", stages.retry_wait),
        ("lock", stages.lock),
        ("execute", stages.execute),
        ("finish", stages.finish),
    ]
    .into_iter()
    .map(|(k, d)| (k.to_string(), frac(d)))
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(v: &[u64]) -> Vec<Duration> {
        v.iter().map(|&x| Duration::from_millis(x)).collect()
    }

    #[test]
    fn latency_summary() {
        let s = LatencyStats::from_durations(&ms(&[1, 2, 3, 4]));
        assert_eq!(s.count, 4);
        assert!((s.mean - 2.5).abs() < 1e-12);
        assert!((s.stddev - 1.25f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.p50, 2.0);
        assert_eq!(s.p99, 4.0);
    }

    #[test]
    fn percentiles_of_a_hundred() {
        let d: Vec<u64> = (1..=100).collect();
        let s = LatencyStats::from_durations(&ms(&d));
        assert_eq!(s.p50, 50.0);
        assert_eq!(s.p99, 99.0);
    }

    #[test]
    fn empty_is_zero() {
        assert_eq!(LatencyStats::from_durations(&[]), LatencyStats::default());
        let t = TrialMetrics::from_samples(0, 1, &[], Duration::ZERO);
        assert_eq!(
            (t.abort_rate, t.throughput, t.avg_lock_wait),
            (0.0, 0.0, 0.0)
        );
    }
}
