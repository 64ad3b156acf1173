//! Domain vocabulary shared by every module.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;
use uuid::Uuid;

/// Identifier of a document. Ordered lexicographically by its canonical
/// string form; lock acquisition relies on this order being total and stable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocumentId(String);

impl DocumentId {
    pub fn new(id: impl Into<String>) -> Self {
        DocumentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DocumentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for DocumentId {
    fn from(s: &str) -> Self {
        DocumentId(s.to_owned())
    }
}

impl From<String> for DocumentId {
    fn from(s: String) -> Self {
        DocumentId(s)
    }
}

/// Total order used for deterministic lock acquisition.
pub fn canonical_order(a: &DocumentId, b: &DocumentId) -> std::cmp::Ordering {
    a.as_str().cmp(b.as_str())
}

/// Transaction identifier: 128 random bits, rendered as a UUID v4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxnId(Uuid);

impl TxnId {
    pub fn from_random_bytes(bytes: [u8; 16]) -> Self {
        TxnId(uuid::Builder::from_random_bytes(bytes).into_uuid())
    }

    pub fn as_u128(&self) -> u128 {
        self.0.as_u128()
    }
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0.hyphenated(), f)
    }
}

impl FromStr for TxnId {
    type Err = uuid::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Uuid::parse_str(s).map(TxnId)
    }
}

impl Serialize for TxnId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TxnId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A field value. Byte strings; serialized as a JSON string when they are
/// valid UTF-8 and as `{"base64": ...}` otherwise.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FieldValue(pub Vec<u8>);

impl FieldValue {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// Interpret the bytes as a decimal integer. Empty or absent values count as zero.
    pub fn as_i64(&self) -> Option<i64> {
        if self.0.is_empty() {
            return Some(0);
        }
        std::str::from_utf8(&self.0).ok()?.trim().parse().ok()
    }

    pub fn from_i64(v: i64) -> Self {
        FieldValue(v.to_string().into_bytes())
    }
}

impl From<&str> for FieldValue {
    fn from(s: &str) -> Self {
        FieldValue(s.as_bytes().to_vec())
    }
}

impl From<Vec<u8>> for FieldValue {
    fn from(v: Vec<u8>) -> Self {
        FieldValue(v)
    }
}

impl Serialize for FieldValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match std::str::from_utf8(&self.0) {
            Ok(text) => s.serialize_str(text),
            Err(_) => {
                use base64::Engine;
                use serde::ser::SerializeMap;
                let mut map = s.serialize_map(Some(1))?;
                map.serialize_entry(
                    "base64",
                    &base64::engine::general_purpose::STANDARD.encode(&self.0),
                )?;
                map.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for FieldValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Binary { base64: String },
        }
        match Repr::deserialize(d)? {
            Repr::Text(t) => Ok(FieldValue(t.into_bytes())),
            Repr::Binary { base64: b } => {
                use base64::Engine;
                base64::engine::general_purpose::STANDARD
                    .decode(b)
                    .map(FieldValue)
                    .map_err(serde::de::Error::custom)
            }
        }
    }
}

pub type FieldMap = BTreeMap<String, FieldValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OpKind {
    Read,
    Insert,
    Update,
    Delete,
    ReadModifyWrite,
}

impl OpKind {
    pub fn is_read(self) -> bool {
        matches!(self, OpKind::Read | OpKind::ReadModifyWrite)
    }

    pub fn is_write(self) -> bool {
        !matches!(self, OpKind::Read)
    }
}

/// What a read-modify-write does with the value it read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modify {
    /// Parse the field as a decimal integer (missing = 0) and add `delta`.
    Increment { field: String, delta: i64 },
    /// Overwrite one field.
    Set { field: String, value: FieldValue },
}

impl Modify {
    /// Post-image fields after applying the descriptor to `current`.
    pub fn apply(&self, current: &FieldMap) -> Result<FieldMap, ModifyError> {
        let mut next = current.clone();
        match self {
            Modify::Increment { field, delta } => {
                let old = match current.get(field) {
                    Some(v) => v
                        .as_i64()
                        .ok_or_else(|| ModifyError::NotAnInteger(field.clone()))?,
                    None => 0,
                };
                next.insert(field.clone(), FieldValue::from_i64(old + delta));
            }
            Modify::Set { field, value } => {
                next.insert(field.clone(), value.clone());
            }
        }
        Ok(next)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModifyError {
    #[error("field `{0}` does not hold an integer")]
    NotAnInteger(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OperationError {
    #[error("{0:?} requires a non-empty payload")]
    EmptyPayload(OpKind),
    #[error("{0:?} takes no payload")]
    UnexpectedPayload(OpKind),
    #[error("READ_MODIFY_WRITE requires a modify descriptor")]
    MissingModify,
}

/// One operation of a transaction. Construct through the kind-specific
/// constructors, which enforce the payload rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operation {
    kind: OpKind,
    doc: DocumentId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    payload: Option<FieldMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    modify: Option<Modify>,
}

impl Operation {
    pub fn read(doc: impl Into<DocumentId>) -> Self {
        Operation {
            kind: OpKind::Read,
            doc: doc.into(),
            payload: None,
            modify: None,
        }
    }

    pub fn insert(doc: impl Into<DocumentId>, fields: FieldMap) -> Result<Self, OperationError> {
        if fields.is_empty() {
            return Err(OperationError::EmptyPayload(OpKind::Insert));
        }
        Ok(Operation {
            kind: OpKind::Insert,
            doc: doc.into(),
            payload: Some(fields),
            modify: None,
        })
    }

    pub fn update(doc: impl Into<DocumentId>, fields: FieldMap) -> Result<Self, OperationError> {
        if fields.is_empty() {
            return Err(OperationError::EmptyPayload(OpKind::Update));
        }
        Ok(Operation {
            kind: OpKind::Update,
            doc: doc.into(),
            payload: Some(fields),
            modify: None,
        })
    }

    pub fn delete(doc: impl Into<DocumentId>) -> Self {
        Operation {
            kind: OpKind::Delete,
            doc: doc.into(),
            payload: None,
            modify: None,
        }
    }

    pub fn read_modify_write(doc: impl Into<DocumentId>, modify: Modify) -> Self {
        Operation {
            kind: OpKind::ReadModifyWrite,
            doc: doc.into(),
            payload: None,
            modify: Some(modify),
        }
    }

    /// Checks the payload rules; useful for operations that arrived through serde.
    pub fn validate(&self) -> Result<(), OperationError> {
        match self.kind {
            OpKind::Read | OpKind::Delete => {
                if self.payload.is_some() {
                    return Err(OperationError::UnexpectedPayload(self.kind));
                }
            }
            OpKind::Insert | OpKind::Update => {
                if self.payload.as_ref().is_none_or(|p| p.is_empty()) {
                    return Err(OperationError::EmptyPayload(self.kind));
                }
            }
            OpKind::ReadModifyWrite => {
                if self.modify.is_none() {
                    return Err(OperationError::MissingModify);
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn doc(&self) -> &DocumentId {
        &self.doc
    }

    pub fn payload(&self) -> Option<&FieldMap> {
        self.payload.as_ref()
    }

    pub fn modify(&self) -> Option<&Modify> {
        self.modify.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TransactionType {
    Read,
    Write,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LockMode {
    Shared,
    Exclusive,
}

impl LockMode {
    pub fn compatible_with(self, other: LockMode) -> bool {
        matches!((self, other), (LockMode::Shared, LockMode::Shared))
    }

    /// Whether holding `self` already satisfies a request for `requested`.
    pub fn covers(self, requested: LockMode) -> bool {
        self >= requested
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TransactionState {
    Pending,
    Ready,
    Executing,
    Committed,
    Aborted,
}

impl TransactionState {
    pub fn can_transition_to(self, next: TransactionState) -> bool {
        use TransactionState::*;
        matches!(
            (self, next),
            (Pending, Ready)
                | (Pending, Aborted)
                | (Ready, Executing)
                | (Ready, Pending)
                | (Executing, Committed)
                | (Executing, Aborted)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            TransactionState::Committed | TransactionState::Aborted
        )
    }
}
