//! Parameter sweeps and the framework overhead measurement.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::{BenchConfig, Mode};
use crate::report::MetricsReport;
use crate::run::run_benchmark;
use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    LockTimeout,
    InitialBackoff,
    MaxBackoff,
    MaxRetries,
}

impl SweepParam {
    /// Accepted range: milliseconds, or a retry count.
    pub fn range(self) -> (u64, u64) {
        match self {
            SweepParam::LockTimeout => (10, 1000),
            SweepParam::InitialBackoff => (1, 50),
            SweepParam::MaxBackoff => (100, 2000),
            SweepParam::MaxRetries => (1, 10),
        }
    }

    pub fn apply(self, config: &mut BenchConfig, value: u64) {
        let ms = Duration::from_millis(value);
        match self {
            SweepParam::LockTimeout => config.pipeline.lock_timeout = ms,
            SweepParam::InitialBackoff => config.pipeline.backoff.initial = ms,
            SweepParam::MaxBackoff => config.pipeline.backoff.max = ms,
            SweepParam::MaxRetries => config.pipeline.max_retries = value as u32,
        }
    }
}

impl FromStr for SweepParam {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "lock-timeout" => Ok(SweepParam::LockTimeout),
            "initial-backoff" => Ok(SweepParam::InitialBackoff),
            "max-backoff" => Ok(SweepParam::MaxBackoff),
            "max-retries" => Ok(SweepParam::MaxRetries),
            _ => Err(BenchError::Config(format!("unknown sweep parameter {s:?}"))),
        }
    }
}

/// One report per value. Every point reuses the base seeds.
pub fn sweep(
    base: &BenchConfig,
    param: SweepParam,
    values: &[u64],
) -> Result<Vec<(u64, MetricsReport)>, BenchError> {
    let (lo, hi) = param.range();
    if let Some(v) = values.iter().find(|v| !(lo..=hi).contains(*v)) {
        return Err(BenchError::Config(format!(
            "{param:?} value {v} outside {lo}..={hi}"
        )));
    }
    values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            param.apply(&mut c, v);
            Ok((v, run_benchmark(&c)?))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    /// Mean end-to-end latency in milliseconds, averaged over trials.
    pub framework_latency: f64,
    pub raw_latency: f64,
    /// `framework_latency / raw_latency - 1`.
    pub total_overhead: f64,
    /// Framework stage shares of end-to-end latency.
    pub stages: BTreeMap<String, f64>,
    pub framework: MetricsReport,
    pub raw: MetricsReport,
}

/// Run the same configuration through the framework and straight against
/// the store, and compare mean latency.
pub fn measure_overhead(config: &BenchConfig) -> Result<OverheadReport, BenchError> {
    let mut fw = config.clone();
    fw.mode = Mode::Framework;
    let mut raw = config.clone();
    raw.mode = Mode::RawStore;
    let framework = run_benchmark(&fw)?;
    let raw = run_benchmark(&raw)?;
    let framework_latency = framework.latency["all"].mean;
    let raw_latency = raw.latency["all"].mean;
    Ok(OverheadReport {
        framework_latency,
        raw_latency,
        total_overhead: if raw_latency > 0.0 {
            framework_latency / raw_latency - 1.0
        } else {
            0.0
        },
        stages: framework.overhead_breakdown.clone(),
        framework,
        raw,
    })
}
