//! Trial aggregation and the JSON / CSV report files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{BenchConfig, Mode};
use crate::metrics::{LatencyStats, TrialMetrics, CLASS_ALL, CLASS_READ, CLASS_UPDATE};
use crate::BenchError;

/// Rows each trial contributes to the CSV form.
pub const CSV_METRICS_PER_TRIAL: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(BenchError::Config(format!("unknown report format {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub mode_label: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub trial_count: u32,
    pub throughput: f64,
    pub confidence_interval_95: (f64, f64),
    pub abort_rate: f64,
    pub conflict_rate: f64,
    pub deadlock_count: u64,
    pub latency: BTreeMap<String, LatencyStats>,
    pub avg_lock_wait: f64,
    pub retry_histogram: BTreeMap<u32, u64>,
    pub overhead_breakdown: BTreeMap<String, f64>,
    /// Every trial's history passed the oracle and audits (vacuously true
    /// when no history was captured).
    pub serializable: bool,
    pub lock_table_empty: bool,
    pub correctness_failure: bool,
    pub config: BenchConfig,
    pub trials: Vec<TrialMetrics>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Two-sided 95% Student-t interval for the mean.
pub fn confidence_interval_95(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs.iter().copied());
    if xs.len() < 2 {
        return (m, m);
    }
    let n = xs.len() as f64;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    let half = t * (var / n).sqrt();
    (m - half, m + half)
}

impl MetricsReport {
    pub fn aggregate(config: &BenchConfig, trials: Vec<TrialMetrics>) -> Self {
        let throughputs: Vec<f64> = trials.iter().map(|t| t.throughput).collect();
        let mut latency = BTreeMap::new();
        for class in [CLASS_READ, CLASS_UPDATE, CLASS_ALL] {
            let per: Vec<LatencyStats> = trials
                .iter()
                .filter_map(|t| t.latency.get(class).copied())
                .collect();
            latency.insert(
                class.to_string(),
                LatencyStats {
                    count: per.iter().map(|s| s.count).sum(),
                    mean: mean(per.iter().map(|s| s.mean)),
                    stddev: mean(per.iter().map(|s| s.stddev)),
                    p50: mean(per.iter().map(|s| s.p50)),
                    p99: mean(per.iter().map(|s| s.p99)),
                },
            );
        }
        let mut retry_histogram = BTreeMap::new();
        let mut overhead = BTreeMap::new();
        for t in &trials {
            for (k, v) in &t.retry_histogram {
                *retry_histogram.entry(*k).or_insert(0) += v;
            }
            for (k, v) in &t.overhead_breakdown {
                *overhead.entry(k.clone()).or_insert(0.0) += v / trials.len() as f64;
            }
        }
        let serializable = trials.iter().all(|t| {
            t.correctness
                .as_ref()
                .is_none_or(|c| c.verdict.serializable)
        });
        let audits_pass = trials
            .iter()
            .all(|t| t.correctness.as_ref().is_none_or(|c| c.passed()));
        let lock_table_empty = trials.iter().all(|t| t.lock_table_empty);
        MetricsReport {
            mode: config.mode,
            mode_label: config.mode.label().to_string(),
            config_hash: config.hash(),
            seeds: trials.iter().map(|t| t.seed).collect(),
            trial_count: trials.len() as u32,
            throughput: mean(throughputs.iter().copied()),
            confidence_interval_95: confidence_interval_95(&throughputs),
            abort_rate: mean(trials.iter().map(|t| t.abort_rate)),
            conflict_rate: mean(trials.iter().map(|t| t.conflict_rate)),
            deadlock_count: trials.iter().map(|t| t.deadlock_count).sum(),
            latency,
            avg_lock_wait: mean(trials.iter().map(|t| t.avg_lock_wait)),
            retry_histogram,
            overhead_breakdown: overhead,
            serializable,
            lock_table_empty,
            correctness_failure: config.mode != Mode::RawStore
                && !(audits_pass && lock_table_empty),
            config: config.clone(),
            trials,
        }
    }

    pub fn to_json(&self) -> Result<String, BenchError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, BenchError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn read_json(path: &Path) -> Result<Self, BenchError> {
        let f = File::open(path).map_err(|e| BenchError::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }

    /// `trial,metric,class,value` rows, one per trial and metric.
    pub fn csv_rows(&self) -> Vec<(u32, &'static str, &'static str, f64)> {
        let mut rows = Vec::with_capacity(self.trials.len() * CSV_METRICS_PER_TRIAL);
        for t in &self.trials {
            rows.push((t.trial, "throughput", "", t.throughput));
            rows.push((t.trial, "abort_rate", "", t.abort_rate));
            rows.push((t.trial, "conflict_rate", "", t.conflict_rate));
            rows.push((t.trial, "deadlock_count", "", t.deadlock_count as f64));
            rows.push((t.trial, "avg_lock_wait_ms", "", t.avg_lock_wait));
            for class in [CLASS_READ, CLASS_UPDATE, CLASS_ALL] {
                let s = t.latency.get(class).copied().unwrap_or_default();
                rows.push((t.trial, "latency_mean_ms", class, s.mean));
                rows.push((t.trial, "latency_stddev_ms", class, s.stddev));
                rows.push((t.trial, "latency_p50_ms", class, s.p50));
                rows.push((t.trial, "latency_p99_ms", class, s.p99));
            }
        }
        rows
    }

    pub fn write_csv(&self, w: impl Write) -> Result<(), BenchError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["trial", "metric", "class", "value"])?;
        for (trial, metric, class, value) in self.csv_rows() {
            out.serialize((trial, metric, class, value))?;
        }
        out.flush().map_err(|e| BenchError::io("<csv>", e))?;
        Ok(())
    }

    pub fn emit(&self, format: ReportFormat, path: &Path) -> Result<(), BenchError> {
        let f = File::create(path).map_err(|e| BenchError::io(path, e))?;
        let mut w = BufWriter::new(f);
        match format {
            ReportFormat::Json => {
                serde_json::to_writer_pretty(&mut w, self)?;
                w.write_all(b"\n").map_err(|e| BenchError::io(path, e))?;
            }
            ReportFormat::Csv => self.write_csv(&mut w)?,
        }
        w.flush().map_err(|e| BenchError::io(path, e))
    }
}

/// Sweep reports as CSV with the swept value in front of each row.
pub fn write_sweep_csv(points: &[(u64, MetricsReport)], w: impl Write) -> Result<(), BenchError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["param_value", "trial", "metric", "class", "value"])?;
    for (v, report) in points {
        for (trial, metric, class, value) in report.csv_rows() {
            out.serialize((v, trial, metric, class, value))?;
        }
    }
    out.flush().map_err(|e| BenchError::io("<csv>", e))?;
    Ok(())
}
