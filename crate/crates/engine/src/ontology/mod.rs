//! Versioned canonical ontology: parsing, event validation and migration.
//!
//! The ontology is a line-oriented UTF-8 text file that declares a schema
//! version and a list of entities with typed fields and relations. Parsed
//! schemas are immutable; validation and migration are pure functions.

mod migrate;
mod parse;
mod units;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Timestamp;

pub use migrate::{migrate_entity, ConverterRegistry, MigrationAction, MigrationStep};
pub use parse::{parse_ontology, serialize_ontology};
pub use units::UnitTable;
pub use validate::validate_event;

#[derive(Debug, Error, PartialEq)]
pub enum OntologyError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing `version` header")]
    MissingVersion,
    #[error("line {line}: duplicate entity `{name}`")]
    DuplicateEntity { line: usize, name: String },
    #[error("line {line}: duplicate field `{field}` in entity `{entity}`")]
    DuplicateField {
        line: usize,
        entity: String,
        field: String,
    },
    #[error("line {line}: entity `{entity}` declares no fields")]
    EmptyEntity { line: usize, entity: String },
    #[error("line {line}: relation `{relation}` targets unknown entity `{target}`")]
    UnknownRelationTarget {
        line: usize,
        relation: String,
        target: String,
    },
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("entity `{entity}` is missing required fields: {}", fields.join(", "))]
    MissingFields { entity: String, fields: Vec<String> },
    #[error("field `{entity}.{field}`: expected {expected}, got {got}")]
    KindMismatch {
        entity: String,
        field: String,
        expected: FieldKind,
        got: String,
    },
    #[error("unknown field `{field}` on entity `{entity}`")]
    UnknownField { entity: String, field: String },
    #[error("no migration step from version {0}")]
    MissingStep(u32),
    #[error("migration step {from}->{to} is not a single version increment")]
    NonContiguousStep { from: u32, to: u32 },
    #[error("record at version {have} cannot reach target {want}")]
    UnreachableVersion { have: u32, want: u32 },
    #[error("converter `{0}` is not registered")]
    UnknownConverter(String),
    #[error("converter `{converter}` failed on `{field}`: {message}")]
    ConverterFailed {
        converter: String,
        field: String,
        message: String,
    },
    #[error("invalid field path `{0}`: expected `Entity.field`")]
    InvalidFieldPath(String),
}

/// The value kind a field may hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Quantity,
    Code,
    Text,
    Timestamp,
    Boolean,
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FieldKind::Quantity => "quantity",
            FieldKind::Code => "code",
            FieldKind::Text => "text",
            FieldKind::Timestamp => "timestamp",
            FieldKind::Boolean => "boolean",
        };
        f.write_str(s)
    }
}

impl FromStr for FieldKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "quantity" => Ok(FieldKind::Quantity),
            "code" => Ok(FieldKind::Code),
            "text" => Ok(FieldKind::Text),
            "timestamp" => Ok(FieldKind::Timestamp),
            "boolean" => Ok(FieldKind::Boolean),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    pub kind: FieldKind,
    /// Canonical unit; present iff `kind` is `Quantity`.
    pub unit: Option<String>,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationDef {
    pub name: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDef {
    pub name: String,
    pub fields: Vec<FieldDef>,
    pub relations: Vec<RelationDef>,
}

impl EntityDef {
    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }
}

/// An immutable, versioned schema produced by [`parse_ontology`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologySchema {
    pub version: u32,
    pub entities: Vec<EntityDef>,
}

impl OntologySchema {
    pub fn entity(&self, name: &str) -> Option<&EntityDef> {
        self.entities.iter().find(|e| e.name == name)
    }

    /// All `(entity, field)` paths for non-timestamp fields, in declaration
    /// order. Timestamps are structural metadata, not shareable data, so
    /// they are excluded from the permission universe.
    pub fn data_field_paths(&self) -> Vec<FieldPath> {
        let mut out = Vec::new();
        for entity in &self.entities {
            for field in &entity.fields {
                if field.kind != FieldKind::Timestamp {
                    out.push(FieldPath::new(&entity.name, &field.name));
                }
            }
        }
        out
    }

    pub fn field_def(&self, path: &FieldPath) -> Option<&FieldDef> {
        self.entity(&path.entity).and_then(|e| e.field(&path.field))
    }

    /// Parses the built-in canonical ontology. Panics only if the shipped
    /// asset is itself broken, which the test suite rules out.
    pub fn builtin() -> Self {
        parse_ontology(crate::defaults::ONTOLOGY_TXT).expect("built-in ontology parses")
    }
}

/// A `(entity, field)` pair; the unit of consent and exposure accounting.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FieldPath {
    pub entity: String,
    pub field: String,
}

impl FieldPath {
    pub fn new(entity: impl Into<String>, field: impl Into<String>) -> Self {
        FieldPath {
            entity: entity.into(),
            field: field.into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self, OntologyError> {
        match s.split_once('.') {
            Some((entity, field)) if !entity.is_empty() && !field.is_empty() => {
                Ok(FieldPath::new(entity, field))
            }
            _ => Err(OntologyError::InvalidFieldPath(s.to_string())),
        }
    }
}

impl fmt::Display for FieldPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.entity, self.field)
    }
}

impl Serialize for FieldPath {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FieldPath {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        FieldPath::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// A typed field value. Quantities always carry their canonical unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldValue {
    Quantity { value: f64, unit: String },
    Code(String),
    Text(String),
    Timestamp(Timestamp),
    Boolean(bool),
}

impl FieldValue {
    pub fn kind(&self) -> FieldKind {
        match self {
            FieldValue::Quantity { .. } => FieldKind::Quantity,
            FieldValue::Code(_) => FieldKind::Code,
            FieldValue::Text(_) => FieldKind::Text,
            FieldValue::Timestamp(_) => FieldKind::Timestamp,
            FieldValue::Boolean(_) => FieldKind::Boolean,
        }
    }

    pub fn as_quantity(&self) -> Option<(f64, &str)> {
        match self {
            FieldValue::Quantity { value, unit } => Some((*value, unit.as_str())),
            _ => None,
        }
    }

    pub fn as_timestamp(&self) -> Option<Timestamp> {
        match self {
            FieldValue::Timestamp(ts) => Some(*ts),
            _ => None,
        }
    }
}

/// A schema-validated record: the payload of every stored observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedEvent {
    pub entity: String,
    pub version: u32,
    pub fields: BTreeMap<String, FieldValue>,
}

impl TypedEvent {
    /// The event's own timestamp, when the entity declares a `ts` field.
    pub fn ts(&self) -> Option<Timestamp> {
        self.fields.get("ts").and_then(FieldValue::as_timestamp)
    }
}
