use std::str::FromStr;
use std::time::Duration;

use doctxn::pipeline::PipelineConfig;
use doctxn::store::LatencyProfile;
use doctxn::workload::WorkloadSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    /// All four stages.
    Framework,
    /// The same pipeline with the readiness check forced to `READY`.
    BaselineNoStage3,
    /// No locks and no pipeline: operations go straight to the store.
    RawStore,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Framework => "framework",
            Mode::BaselineNoStage3 => "ablation baseline: readiness check disabled",
            Mode::RawStore => "raw store, no concurrency control",
        }
    }
}

impl FromStr for Mode {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "framework" => Ok(Mode::Framework),
            "no-stage3" | "baseline" | "baseline_no_stage3" => Ok(Mode::BaselineNoStage3),
            "raw" | "raw_store" => Ok(Mode::RawStore),
            _ => Err(BenchError::Config(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    /// OS threads against the wall clock.
    Real,
    /// A single-threaded event loop on a virtual clock.
    Virtual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// Measured transactions per trial, across all clients.
    Ops(u64),
    /// Length of the measured phase.
    Duration(Duration),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub workload: WorkloadSpec,
    pub clients: usize,
    pub bound: Bound,
    pub warmup: Duration,
    pub pipeline: PipelineConfig,
    pub trials: u32,
    pub seed: u64,
    pub mode: Mode,
    pub time: TimeMode,
    pub store_latency: LatencyProfile,
    /// Re-submit a failed transaction until it commits. Each submission
    /// is still counted on its own.
    pub resubmit: bool,
    /// Wait-for graph sampling period.
    pub sample_interval: Duration,
    /// Keep the event log and run the oracle over it.
    pub capture_history: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            workload: WorkloadSpec::a(),
            clients: 1,
            bound: Bound::Ops(10_000),
            warmup: Duration::from_secs(2),
            pipeline: PipelineConfig::default(),
            trials: 5,
            seed: 1,
            mode: Mode::Framework,
            time: TimeMode::Real,
            store_latency: LatencyProfile::default(),
            resubmit: false,
            sample_interval: Duration::from_millis(10),
            capture_history: true,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.clients == 0 {
            return Err(BenchError::Config("clients must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(BenchError::Config("trials must be at least 1".into()));
        }
        if self.sample_interval.is_zero() {
            return Err(BenchError::Config(
                "sample interval must be positive".into(),
            ));
        }
        let timed = !self.warmup.is_zero() || matches!(self.bound, Bound::Duration(_));
        if self.time == TimeMode::Virtual && timed && self.store_latency.is_zero() {
            return Err(BenchError::Config(
                "virtual time with a warmup or duration bound needs non-zero store latency".into(),
            ));
        }
        self.workload.validate()?;
        self.pipeline.validate()?;
        Ok(())
    }

    pub fn trial_seed(&self, trial: u32) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }

    /// Hex SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json))
    }

    /// Pipeline settings for one trial: seeded ids and backoff, and the
    /// readiness check switched off in the ablation mode.
    pub fn pipeline_for(&self, trial_seed: u64) -> PipelineConfig {
        let mut p = self.pipeline;
        p.readiness_check = self.mode != Mode::BaselineNoStage3;
        p.id_seed = Some(trial_seed);
        p.backoff.seed = trial_seed;
        p
    }
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
