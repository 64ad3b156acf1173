//! Benchmark harness for the `doctxn` pipeline: closed-loop clients over a
//! YCSB-style workload, consistency metrics, parameter sweeps and reports.

use std::path::PathBuf;

use thiserror::Error;

pub mod cli;
pub mod config;
pub mod engine;
pub mod metrics;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{BenchConfig, Bound, Mode, TimeMode};
pub use engine::{Engine, OpClass, Sample};
pub use metrics::{LatencyStats, TrialMetrics};
pub use report::{MetricsReport, ReportFormat};
pub use run::{run_benchmark, run_trial};
pub use sweep::{measure_overhead, sweep, OverheadReport, SweepParam};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Pipeline(#[from] doctxn::pipeline::PipelineError),
    #[error(transparent)]
    Workload(#[from] doctxn::workload::WorkloadError),
    #[error(transparent)]
    Store(#[from] doctxn::store::StoreError),
    #[error("captured history is malformed: {0}")]
    History(#[from] doctxn::oracle::HistoryError),
    #[error(transparent)]
    EventLog(#[from] doctxn::pipeline::events::EventLogError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("worker thread panicked")]
    WorkerPanic,
}

impl BenchError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/workload.md")]
    mod workload {}
    #[doc = include_str!("../../../book/src/bench.md")]
    mod bench {}
}
