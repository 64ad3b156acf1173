//! Document store interface and the in-memory reference backend.
//!
//! The store does no transactional locking of its own. Each call is atomic
//! for the single document it touches, and isolation across documents is
//! left entirely to the lock manager.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;
use std::time::Duration;

use dashmap::DashMap;
use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{RealClock, SharedClock};
use crate::types::{DocumentId, FieldMap, OpKind, Operation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: DocumentId,
    pub fields: FieldMap,
    pub version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WriteOutcome {
    Applied,
    ConstraintViolation,
    NotFound,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{op:?} is not a write operation")]
    NotAWrite { op: OpKind },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A delay distribution for latency injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delay {
    Fixed(Duration),
    /// Uniform over `[lo, hi]`.
    Uniform {
        lo: Duration,
        hi: Duration,
    },
}

impl Delay {
    pub const NONE: Delay = Delay::Fixed(Duration::ZERO);

    fn sample(&self, rng: &mut ChaCha8Rng) -> Duration {
        match *self {
            Delay::Fixed(d) => d,
            Delay::Uniform { lo, hi } => {
                if hi <= lo {
                    lo
                } else {
                    let ns = rng.gen_range(lo.as_nanos() as u64..=hi.as_nanos() as u64);
                    Duration::from_nanos(ns)
                }
            }
        }
    }

    fn is_zero(&self) -> bool {
        match *self {
            Delay::Fixed(d) => d.is_zero(),
            Delay::Uniform { hi, .. } => hi.is_zero(),
        }
    }
}

/// Per-operation round-trip latency, standing in for a replicated backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyProfile {
    pub read_delay: Delay,
    pub write_delay: Delay,
    pub seed: u64,
}

impl LatencyProfile {
    pub fn fixed(read: Duration, write: Duration) -> Self {
        LatencyProfile {
            read_delay: Delay::Fixed(read),
            write_delay: Delay::Fixed(write),
            seed: 0,
        }
    }

    pub fn uniform(lo: Duration, hi: Duration, seed: u64) -> Self {
        LatencyProfile {
            read_delay: Delay::Uniform { lo, hi },
            write_delay: Delay::Uniform { lo, hi },
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.read_delay.is_zero() && self.write_delay.is_zero()
    }
}

impl Default for LatencyProfile {
    fn default() -> Self {
        LatencyProfile::fixed(Duration::ZERO, Duration::ZERO)
    }
}

type Predicate = dyn Fn(&Document) -> bool + Send + Sync;

/// A named post-image check. Writes whose result fails any registered
/// constraint are refused without mutating the document.
#[derive(Clone)]
pub struct Constraint {
    name: String,
    check: Arc<Predicate>,
}

impl Constraint {
    pub fn new(
        name: impl Into<String>,
        check: impl Fn(&Document) -> bool + Send + Sync + 'static,
    ) -> Self {
        Constraint {
            name: name.into(),
            check: Arc::new(check),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl std::fmt::Debug for Constraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Constraint")
            .field("name", &self.name)
            .finish()
    }
}

/// The interface the transaction pipeline drives.
///
/// `read` and `write` are instantaneous; injected latency is reported
/// through `read_delay`/`write_delay` so that the caller decides how to
/// spend it (a thread sleep, or a simulated wait).
pub trait DocumentStore: Send + Sync {
    fn read(&self, id: &DocumentId) -> Option<Document>;

    fn write(&self, op: &Operation) -> Result<WriteOutcome, StoreError>;

    /// Put back a pre-image captured before a write. `None` removes the document.
    fn restore(&self, id: &DocumentId, image: Option<Document>);

    fn snapshot(&self) -> BTreeMap<DocumentId, Document>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn read_delay(&self) -> Duration {
        Duration::ZERO
    }

    fn write_delay(&self) -> Duration {
        Duration::ZERO
    }
}

struct Latency {
    profile: LatencyProfile,
    rng: Mutex<ChaCha8Rng>,
}

pub struct MemoryStore {
    docs: DashMap<DocumentId, Document>,
    constraints: RwLock<Vec<Constraint>>,
    latency: Option<Latency>,
    clock: SharedClock,
}

impl std::fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryStore")
            .field("docs", &self.docs.len())
            .field("constraints", &self.constraints.read().len())
            .field("latency", &self.latency.as_ref().map(|l| l.profile))
            .finish()
    }
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::new()
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore {
            docs: DashMap::new(),
            constraints: RwLock::new(Vec::new()),
            latency: None,
            clock: Arc::new(RealClock::new()),
        }
    }

    /// A store whose `get`/`apply_write` sleep on `clock` for the sampled delay.
    pub fn with_latency(profile: LatencyProfile, clock: SharedClock) -> Self {
        let latency = (!profile.is_zero()).then(|| Latency {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(profile.seed)),
            profile,
        });
        MemoryStore {
            docs: DashMap::new(),
            constraints: RwLock::new(Vec::new()),
            latency,
            clock,
        }
    }

    pub fn register_constraint(&self, constraint: Constraint) {
        self.constraints.write().push(constraint);
    }

    /// Read with the injected read latency applied.
    pub fn get(&self, id: &DocumentId) -> Option<Document> {
        let d = self.read_delay();
        if !d.is_zero() {
            self.clock.sleep(d);
        }
        self.read(id)
    }

    /// Write with the injected write latency applied.
    pub fn apply_write(&self, op: &Operation) -> Result<WriteOutcome, StoreError> {
        let d = self.write_delay();
        if !d.is_zero() {
            self.clock.sleep(d);
        }
        self.write(op)
    }

    /// Load newline-delimited `{"id", "fields", "version"}` records.
    pub fn load_ndjson(&self, reader: impl BufRead) -> Result<usize, StoreError> {
        let mut count = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document =
                serde_json::from_str(&line).map_err(|source| StoreError::Parse {
                    line: i + 1,
                    source,
                })?;
            self.docs.insert(doc.id.clone(), doc);
            count += 1;
        }
        Ok(count)
    }

    /// Dump every document, one JSON record per line, in id order.
    pub fn dump_ndjson(&self, mut writer: impl Write) -> Result<(), StoreError> {
        for doc in self.snapshot().values() {
            serde_json::to_writer(&mut writer, doc).map_err(std::io::Error::from)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    fn passes_constraints(&self, doc: &Document) -> bool {
        self.constraints.read().iter().all(|c| (c.check)(doc))
    }

    fn sample(&self, pick: impl Fn(&LatencyProfile) -> Delay) -> Duration {
        match &self.latency {
            Some(l) => pick(&l.profile).sample(&mut l.rng.lock()),
            None => Duration::ZERO,
        }
    }
}

impl DocumentStore for MemoryStore {
    fn read(&self, id: &DocumentId) -> Option<Document> {
        self.docs.get(id).map(|d| d.clone())
    }

    fn write(&self, op: &Operation) -> Result<WriteOutcome, StoreError> {
        use dashmap::mapref::entry::Entry;

        let id = op.doc().clone();
        let outcome = match (op.kind(), self.docs.entry(id.clone())) {
            (OpKind::Read, _) => return Err(StoreError::NotAWrite { op: OpKind::Read }),
            (OpKind::Insert, Entry::Vacant(slot)) => {
                let doc = Document {
                    id,
                    fields: op.payload().cloned().unwrap_or_default(),
                    version: 1,
                };
                if self.passes_constraints(&doc) {
                    slot.insert(doc);
                    WriteOutcome::Applied
                } else {
                    WriteOutcome::ConstraintViolation
                }
            }
            // Inserting over an existing document replaces its fields.
            (OpKind::Insert, Entry::Occupied(mut slot)) => {
                let next = Document {
                    id,
                    fields: op.payload().cloned().unwrap_or_default(),
                    version: slot.get().version + 1,
                };
                if self.passes_constraints(&next) {
                    slot.insert(next);
                    WriteOutcome::Applied
                } else {
                    WriteOutcome::ConstraintViolation
                }
            }
            (OpKind::Update | OpKind::Delete | OpKind::ReadModifyWrite, Entry::Vacant(_)) => {
                WriteOutcome::NotFound
            }
            (OpKind::Delete, Entry::Occupied(slot)) => {
                slot.remove();
                WriteOutcome::Applied
            }
            (OpKind::Update, Entry::Occupied(mut slot)) => {
                let cur = slot.get();
                let mut fields = cur.fields.clone();
                if let Some(p) = op.payload() {
                    fields.extend(p.iter().map(|(k, v)| (k.clone(), v.clone())));
                }
                let next = Document {
                    id,
                    fields,
                    version: cur.version + 1,
                };
                if self.passes_constraints(&next) {
                    slot.insert(next);
                    WriteOutcome::Applied
                } else {
                    WriteOutcome::ConstraintViolation
                }
            }
            (OpKind::ReadModifyWrite, Entry::Occupied(mut slot)) => {
                let cur = slot.get();
                let Some(modify) = op.modify() else {
                    return Ok(WriteOutcome::ConstraintViolation);
                };
                match modify.apply(&cur.fields) {
                    Ok(fields) => {
                        let next = Document {
                            id,
                            fields,
                            version: cur.version + 1,
                        };
                        if self.passes_constraints(&next) {
                            slot.insert(next);
                            WriteOutcome::Applied
                        } else {
                            WriteOutcome::ConstraintViolation
                        }
                    }
                    Err(_) => WriteOutcome::ConstraintViolation,
                }
            }
        };
        Ok(outcome)
    }

    fn restore(&self, id: &DocumentId, image: Option<Document>) {
        match image {
            Some(doc) => {
                self.docs.insert(id.clone(), doc);
            }
            None => {
                self.docs.remove(id);
            }
        }
    }

    fn snapshot(&self) -> BTreeMap<DocumentId, Document> {
        self.docs
            .iter()
            .map(|e| (e.key().clone(), e.value().clone()))
            .collect()
    }

    fn len(&self) -> usize {
        self.docs.len()
    }

    fn read_delay(&self) -> Duration {
        self.sample(|p| p.read_delay)
    }

    fn write_delay(&self) -> Duration {
        self.sample(|p| p.write_delay)
    }
}
