//! YCSB-style workload generation.
//!
//! A [`WorkloadSpec`] fixes the operation mix, the key distribution and the
//! record shape. [`load_phase`] populates a store with `user0 .. userN-1`;
//! a [`WorkloadGenerator`] then produces transactions as operation lists.
//! Generators are deterministic in `(spec, seed)`.

mod properties;
mod zipf;

use std::str::FromStr;

use rand::distributions::Alphanumeric;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use properties::Properties;
pub use zipf::{zeta, zipfian_next, ZipfError, Zipfian};

use crate::store::{DocumentStore, StoreError, WriteOutcome};
use crate::types::{DocumentId, FieldMap, FieldValue, Modify, Operation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WorkloadName {
    A,
    B,
    F,
    Custom,
}

impl FromStr for WorkloadName {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().trim_start_matches("workload") {
            "a" => Ok(WorkloadName::A),
            "b" => Ok(WorkloadName::B),
            "f" => Ok(WorkloadName::F),
            "custom" => Ok(WorkloadName::Custom),
            _ => Err(WorkloadError::Value {
                key: "workload".into(),
                value: s.into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    Uniform,
    Zipfian {
        theta: f64,
    },
    /// `op_fraction` of the accesses go to the first `data_fraction` of the keys.
    Hotspot {
        data_fraction: f64,
        op_fraction: f64,
    },
}

impl Default for Distribution {
    fn default() -> Self {
        Distribution::Zipfian { theta: 0.99 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpsPerTransaction {
    Fixed(u32),
    /// Uniform over `min..=max`.
    Uniform {
        min: u32,
        max: u32,
    },
}

impl Default for OpsPerTransaction {
    fn default() -> Self {
        OpsPerTransaction::Fixed(1)
    }
}

/// `k` or `min-max`.
impl FromStr for OpsPerTransaction {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || WorkloadError::Value {
            key: "opspertransaction".into(),
            value: s.into(),
        };
        let num = |t: &str| t.trim().parse::<u32>().map_err(|_| bad());
        Ok(match s.split_once('-') {
            Some((lo, hi)) => OpsPerTransaction::Uniform {
                min: num(lo)?,
                max: num(hi)?,
            },
            None => OpsPerTransaction::Fixed(num(s)?),
        })
    }
}

/// What a generated read-modify-write does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmwStyle {
    /// Overwrite one random field with fresh bytes.
    #[default]
    Overwrite,
    /// Add one to the integer field `counter`.
    Increment,
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error(
        "operation fractions must each lie in [0, 1] and sum to 1, got {read} + {update} + {rmw}"
    )]
    Fractions { read: f64, update: f64, rmw: f64 },
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("invalid ops per transaction: {0}")]
    OpsPerTransaction(String),
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("invalid value {value:?} for {key}")]
    Value { key: String, value: String },
    #[error("{0} is not supported")]
    Unsupported(String),
    #[error(transparent)]
    Zipf(#[from] ZipfError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub name: WorkloadName,
    pub read_fraction: f64,
    pub update_fraction: f64,
    pub rmw_fraction: f64,
    pub record_count: u64,
    pub field_count: u32,
    pub field_length: usize,
    pub distribution: Distribution,
    pub ops_per_transaction: OpsPerTransaction,
    pub rmw_style: RmwStyle,
}

impl WorkloadSpec {
    fn preset(name: WorkloadName, read: f64, update: f64, rmw: f64) -> Self {
        WorkloadSpec {
            name,
            read_fraction: read,
            update_fraction: update,
            rmw_fraction: rmw,
            record_count: 1000,
            field_count: 10,
            field_length: 100,
            distribution: Distribution::default(),
            ops_per_transaction: OpsPerTransaction::default(),
            rmw_style: RmwStyle::default(),
        }
    }

    /// 50% reads, 50% updates.
    pub fn a() -> Self {
        Self::preset(WorkloadName::A, 0.5, 0.5, 0.0)
    }

    /// 95% reads, 5% updates.
    pub fn b() -> Self {
        Self::preset(WorkloadName::B, 0.95, 0.05, 0.0)
    }

    /// 50% reads, 50% read-modify-writes.
    pub fn f() -> Self {
        Self::preset(WorkloadName::F, 0.5, 0.0, 0.5)
    }

    pub fn custom(read: f64, update: f64, rmw: f64) -> Self {
        Self::preset(WorkloadName::Custom, read, update, rmw)
    }

    pub fn named(name: WorkloadName) -> Self {
        match name {
            WorkloadName::A => Self::a(),
            WorkloadName::B => Self::b(),
            WorkloadName::F => Self::f(),
            WorkloadName::Custom => Self::custom(1.0, 0.0, 0.0),
        }
    }

    pub fn with_records(mut self, n: u64) -> Self {
        self.record_count = n;
        self
    }

    pub fn with_distribution(mut self, d: Distribution) -> Self {
        self.distribution = d;
        self
    }

    pub fn with_ops(mut self, ops: OpsPerTransaction) -> Self {
        self.ops_per_transaction = ops;
        self
    }

    pub fn with_rmw_style(mut self, style: RmwStyle) -> Self {
        self.rmw_style = style;
        self
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let f = [self.read_fraction, self.update_fraction, self.rmw_fraction];
        if f.iter().any(|x| !(0.0..=1.0).contains(x)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(WorkloadError::Fractions {
                read: f[0],
                update: f[1],
                rmw: f[2],
            });
        }
        match self.distribution {
            Distribution::Uniform => {}
            Distribution::Zipfian { theta } => {
                if !(theta > 0.0 && theta < 1.0) {
                    return Err(ZipfError::Theta(theta).into());
                }
            }
            Distribution::Hotspot {
                data_fraction,
                op_fraction,
            } => {
                if !(data_fraction > 0.0 && data_fraction <= 1.0)
                    || !(0.0..=1.0).contains(&op_fraction)
                {
                    return Err(WorkloadError::Distribution(format!(
                        "hotspot fractions {data_fraction}/{op_fraction} out of range"
                    )));
                }
            }
        }
        match self.ops_per_transaction {
            OpsPerTransaction::Fixed(0) => {
                return Err(WorkloadError::OpsPerTransaction(
                    "must be at least 1".into(),
                ));
            }
            OpsPerTransaction::Uniform { min, max } if min == 0 || min > max => {
                return Err(WorkloadError::OpsPerTransaction(format!("{min}-{max}")));
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn key_for(index: u64) -> DocumentId {
    DocumentId::new(format!("user{index}"))
}

fn field_name(i: u32) -> String {
    format!("field{i}")
}

fn random_value(rng: &mut impl Rng, len: usize) -> FieldValue {
    FieldValue(rng.sample_iter(&Alphanumeric).take(len).collect())
}

/// Insert `record_count` documents `user0 ..` with seeded random fields.
/// Returns the number inserted.
pub fn load_phase(
    spec: &WorkloadSpec,
    store: &dyn DocumentStore,
    seed: u64,
) -> Result<u64, WorkloadError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inserted = 0;
    for i in 0..spec.record_count {
        let fields: FieldMap = (0..spec.field_count)
            .map(|f| (field_name(f), random_value(&mut rng, spec.field_length)))
            .collect();
        let op = if fields.is_empty() {
            Operation::insert(
                key_for(i),
                FieldMap::from([("counter".to_owned(), FieldValue::from_i64(0))]),
            )
        } else {
            Operation::insert(key_for(i), fields)
        }
        .expect("non-empty payload");
        if store.write(&op)? == WriteOutcome::Applied {
            inserted += 1;
        }
    }
    Ok(inserted)
}

enum KeyChooser {
    Uniform,
    Zipfian(Zipfian),
    Hotspot { hot: u64, op_fraction: f64 },
}

/// Produces transactions for one worker.
pub struct WorkloadGenerator {
    spec: WorkloadSpec,
    rng: ChaCha8Rng,
    keys: KeyChooser,
}

impl std::fmt::Debug for WorkloadGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkloadGenerator")
            .field("spec", &self.spec)
            .finish()
    }
}

impl WorkloadGenerator {
    pub fn new(spec: WorkloadSpec, seed: u64) -> Result<Self, WorkloadError> {
        spec.validate()?;
        let n = spec.record_count.max(1);
        let keys = match spec.distribution {
            Distribution::Uniform => KeyChooser::Uniform,
            Distribution::Zipfian { theta } => KeyChooser::Zipfian(Zipfian::new(n, theta)?),
            Distribution::Hotspot {
                data_fraction,
                op_fraction,
            } => KeyChooser::Hotspot {
                hot: ((n as f64 * data_fraction) as u64).clamp(1, n),
                op_fraction,
            },
        };
        Ok(WorkloadGenerator {
            spec,
            rng: ChaCha8Rng::seed_from_u64(seed),
            keys,
        })
    }

    /// Generator for worker `index`, seeded `seed + index`.
    pub fn for_worker(spec: WorkloadSpec, seed: u64, index: u64) -> Result<Self, WorkloadError> {
        Self::new(spec, seed.wrapping_add(index))
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn next_key_index(&mut self) -> u64 {
        let n = self.spec.record_count.max(1);
        match &self.keys {
            KeyChooser::Uniform => self.rng.gen_range(0..n),
            KeyChooser::Zipfian(z) => z.sample(&mut self.rng),
            KeyChooser::Hotspot { hot, op_fraction } => {
                if *hot == n || self.rng.gen_bool(*op_fraction) {
                    self.rng.gen_range(0..*hot)
                } else {
                    self.rng.gen_range(*hot..n)
                }
            }
        }
    }

    pub fn next_key(&mut self) -> DocumentId {
        let i = self.next_key_index();
        key_for(i)
    }

    pub fn next_operation(&mut self) -> Operation {
        let doc = self.next_key();
        let x: f64 = self.rng.gen();
        if x < self.spec.read_fraction {
            Operation::read(doc)
        } else if x < self.spec.read_fraction + self.spec.update_fraction {
            let field = field_name(self.rng.gen_range(0..self.spec.field_count.max(1)));
            let value = random_value(&mut self.rng, self.spec.field_length.max(1));
            Operation::update(doc, FieldMap::from([(field, value)])).expect("non-empty payload")
        } else {
            let modify = match self.spec.rmw_style {
                RmwStyle::Overwrite => Modify::Set {
                    field: field_name(self.rng.gen_range(0..self.spec.field_count.max(1))),
                    value: random_value(&mut self.rng, self.spec.field_length.max(1)),
                },
                RmwStyle::Increment => Modify::Increment {
                    field: "counter".into(),
                    delta: 1,
                },
            };
            Operation::read_modify_write(doc, modify)
        }
    }

    pub fn next_transaction(&mut self) -> Vec<Operation> {
        let len = match self.spec.ops_per_transaction {
            OpsPerTransaction::Fixed(k) => k,
            OpsPerTransaction::Uniform { min, max } => self.rng.gen_range(min..=max),
        };
        (0..len).map(|_| self.next_operation()).collect()
    }
}
