//! The canonical profile store: sealed event log, field/time index and
//! snapshot history.
//!
//! Events are sealed at ingest (encryption at rest) and indexed by
//! `(entity, field, time)` for enrichment and retrieval. Ingestion is
//! idempotent: event ids are content hashes and duplicates are no-ops.

mod enrich;
mod snapshot;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use enrich::{
    compute_baseline, enrich_features, ActivityClass, Baseline, DerivedFeature, EnrichConfig,
    FeatureSet, MetricFeature,
};
pub use snapshot::{build_snapshot, ProfileSnapshot, SnapshotConfig, SnapshotStatement};

use crate::connectors::{EventSink, ProfileEvent, PushOutcome};
use crate::ids::{ActorId, EventId};
use crate::ontology::{FieldKind, FieldPath, FieldValue, OntologyError, OntologySchema};
use crate::time::{TimeWindow, Timestamp};
use crate::vault::{KeyRing, SealedRecord, VaultError};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("event `{0}` has incomplete provenance")]
    ProvenanceIncomplete(EventId),
    #[error("event `{0}` is not in the store")]
    UnknownEvent(EventId),
    #[error(transparent)]
    Validation(#[from] OntologyError),
    #[error(transparent)]
    Vault(#[from] VaultError),
}

/// Indexed view of one field value inside an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IndexedValue {
    Num(f64),
    Code(String),
    Text(String),
    Flag(bool),
}

impl IndexedValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            IndexedValue::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_code(&self) -> Option<&str> {
        match self {
            IndexedValue::Code(c) => Some(c),
            IndexedValue::Text(t) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOutcome {
    pub id: EventId,
    /// False when the event was already present (idempotent no-op).
    pub stored: bool,
}

/// A stored briefing or subject summary, kept for history and audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredSnapshot {
    pub snapshot_id: String,
    pub audience: ActorId,
    pub window: TimeWindow,
    pub rendering: String,
    pub created_at: Timestamp,
}

/// Single-writer, per-subject store. Reads (enrichment, snapshots) operate
/// on the immutable index and are safe to run concurrently.
pub struct ProfileStore {
    subject: ActorId,
    schema: Arc<OntologySchema>,
    keyring: KeyRing,
    sealed: BTreeMap<EventId, SealedRecord>,
    index: BTreeMap<FieldPath, BTreeMap<(Timestamp, EventId), IndexedValue>>,
    snapshots: Vec<StoredSnapshot>,
}

impl ProfileStore {
    pub fn new(subject: ActorId, schema: Arc<OntologySchema>, passphrase: &str, now: Timestamp) -> Self {
        ProfileStore {
            subject,
            schema,
            keyring: KeyRing::new(passphrase, now),
            sealed: BTreeMap::new(),
            index: BTreeMap::new(),
            snapshots: Vec::new(),
        }
    }

    pub fn subject(&self) -> &ActorId {
        &self.subject
    }

    pub fn schema(&self) -> &OntologySchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.sealed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sealed.is_empty()
    }

    pub fn contains(&self, id: &EventId) -> bool {
        self.sealed.contains_key(id)
    }

    /// Validates, seals and indexes one event. Duplicate ids are no-ops.
    pub fn ingest_event(&mut self, event: ProfileEvent) -> Result<IngestOutcome, ProfileError> {
        if !event.provenance.is_complete() {
            return Err(ProfileError::ProvenanceIncomplete(event.id.clone()));
        }
        validate_typed(&self.schema, &event)?;
        if self.sealed.contains_key(&event.id) {
            return Ok(IngestOutcome {
                id: event.id,
                stored: false,
            });
        }

        let id = event.id.clone();
        let bytes = serde_json::to_vec(&event).expect("event serializes");
        let sealed = self
            .keyring
            .seal(id.as_str(), event.payload.version, &bytes)?;

        let ts = event.payload.ts().unwrap_or(event.provenance.server_ts);
        for (name, value) in &event.payload.fields {
            if name == "ts" {
                continue;
            }
            let path = FieldPath::new(&event.payload.entity, name);
            let indexed = match value {
                FieldValue::Quantity { value, .. } => IndexedValue::Num(*value),
                FieldValue::Code(c) => IndexedValue::Code(c.clone()),
                FieldValue::Text(t) => IndexedValue::Text(t.clone()),
                FieldValue::Boolean(b) => IndexedValue::Flag(*b),
                FieldValue::Timestamp(_) => continue,
            };
            self.index
                .entry(path)
                .or_default()
                .insert((ts, id.clone()), indexed);
        }
        self.sealed.insert(id.clone(), sealed);
        Ok(IngestOutcome { id, stored: true })
    }

    /// Unseals and returns a stored event.
    pub fn get_event(&self, id: &EventId) -> Result<ProfileEvent, ProfileError> {
        let sealed = self
            .sealed
            .get(id)
            .ok_or_else(|| ProfileError::UnknownEvent(id.clone()))?;
        let bytes = self.keyring.unseal(sealed)?;
        serde_json::from_slice(&bytes).map_err(|e| {
            ProfileError::Vault(VaultError::Corrupt {
                path: id.to_string(),
                message: e.to_string(),
            })
        })
    }

    pub fn event_ids(&self) -> impl Iterator<Item = &EventId> {
        self.sealed.keys()
    }

    pub fn indexed_paths(&self) -> impl Iterator<Item = &FieldPath> {
        self.index.keys()
    }

    /// Index entries for `path` within `window`, in (time, id) order.
    pub fn entries_in(
        &self,
        path: &FieldPath,
        window: &TimeWindow,
    ) -> Vec<(&Timestamp, &EventId, &IndexedValue)> {
        match self.index.get(path) {
            Some(map) => map
                .range((window.start, EventId::default())..)
                .take_while(|((ts, _), _)| *ts < window.end)
                .map(|((ts, id), v)| (ts, id, v))
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn store_snapshot(&mut self, snapshot: StoredSnapshot) {
        self.snapshots.push(snapshot);
    }

    pub fn snapshots(&self) -> &[StoredSnapshot] {
        &self.snapshots
    }
}

impl EventSink for ProfileStore {
    fn push(&mut self, events: Vec<ProfileEvent>) -> Result<PushOutcome, OntologyError> {
        let mut outcome = PushOutcome::default();
        for event in events {
            match self.ingest_event(event) {
                Ok(result) => {
                    if result.stored {
                        outcome.stored += 1;
                    } else {
                        outcome.duplicates += 1;
                    }
                }
                Err(ProfileError::Validation(e)) => return Err(e),
                // Sink contract speaks ontology errors; wrap the rest.
                Err(e) => {
                    return Err(OntologyError::Syntax {
                        line: 0,
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(outcome)
    }
}

/// Structural validation of an already-typed event against the schema.
fn validate_typed(schema: &OntologySchema, event: &ProfileEvent) -> Result<(), OntologyError> {
    let entity = schema
        .entity(&event.payload.entity)
        .ok_or_else(|| OntologyError::UnknownEntity(event.payload.entity.clone()))?;
    for (name, value) in &event.payload.fields {
        let def = entity
            .field(name)
            .ok_or_else(|| OntologyError::UnknownField {
                entity: entity.name.clone(),
                field: name.clone(),
            })?;
        if def.kind != value.kind() {
            return Err(OntologyError::KindMismatch {
                entity: entity.name.clone(),
                field: name.clone(),
                expected: def.kind,
                got: value.kind().to_string(),
            });
        }
        if def.kind == FieldKind::Quantity {
            let (_, unit) = value.as_quantity().expect("kind checked");
            if Some(unit) != def.unit.as_deref() {
                return Err(OntologyError::KindMismatch {
                    entity: entity.name.clone(),
                    field: name.clone(),
                    expected: def.kind,
                    got: format!("quantity in `{unit}`"),
                });
            }
        }
    }
    let missing: Vec<String> = entity
        .fields
        .iter()
        .filter(|f| f.required && !event.payload.fields.contains_key(&f.name))
        .map(|f| f.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(OntologyError::MissingFields {
            entity: entity.name.clone(),
            fields: missing,
        });
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::connectors::Provenance;
    use serde_json::json;

    pub fn store(subject: &str) -> ProfileStore {
        ProfileStore::new(
            ActorId::new(subject),
            Arc::new(OntologySchema::builtin()),
            "test-pass",
            Timestamp::from_millis(0),
        )
    }

    pub fn vital_event(
        schema: &OntologySchema,
        field: &str,
        value: f64,
        ts: Timestamp,
    ) -> ProfileEvent {
        let raw = json!({ field: value, "ts": ts.to_rfc3339() });
        let typed =
            crate::ontology::validate_event(schema, raw.as_object().unwrap(), "VitalSign").unwrap();
        let provenance = Provenance {
            source_device_id: "dev-1".to_string(),
            firmware_version: "1.0".to_string(),
            sampling_method: "test".to_string(),
            device_ts: ts,
            server_ts: ts,
            tz_offset_minutes: 0,
            derived: false,
            notes: Vec::new(),
        };
        ProfileEvent::new(
            typed,
            provenance,
            [FieldPath::new("VitalSign", field)].into_iter().collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::time::MILLIS_PER_MINUTE;

    fn t(minutes: i64) -> Timestamp {
        Timestamp::from_millis(minutes * MILLIS_PER_MINUTE)
    }

    #[test]
    fn ingest_is_idempotent() {
        let mut store = store("s");
        let schema = OntologySchema::builtin();
        let event = vital_event(&schema, "heart_rate", 72.0, t(1));

        let first = store.ingest_event(event.clone()).unwrap();
        assert!(first.stored);
        assert_eq!(store.len(), 1);

        let second = store.ingest_event(event).unwrap();
        assert!(!second.stored);
        assert_eq!(store.len(), 1, "duplicate ingest is a no-op");
    }

    #[test]
    fn events_are_sealed_and_recoverable() {
        let mut store = store("s");
        let schema = OntologySchema::builtin();
        let event = vital_event(&schema, "heart_rate", 72.0, t(1));
        let id = store.ingest_event(event.clone()).unwrap().id;
        let roundtrip = store.get_event(&id).unwrap();
        assert_eq!(roundtrip, event);
    }

    #[test]
    fn incomplete_provenance_rejected() {
        let mut store = store("s");
        let schema = OntologySchema::builtin();
        let mut event = vital_event(&schema, "heart_rate", 72.0, t(1));
        event.provenance.source_device_id.clear();
        assert!(matches!(
            store.ingest_event(event),
            Err(ProfileError::ProvenanceIncomplete(_))
        ));
    }

    #[test]
    fn invalid_event_rejected_with_field_error() {
        let mut store = store("s");
        let schema = OntologySchema::builtin();
        let mut event = vital_event(&schema, "heart_rate", 72.0, t(1));
        event.payload.fields.insert(
            "made_up".to_string(),
            crate::ontology::FieldValue::Text("x".to_string()),
        );
        assert!(matches!(
            store.ingest_event(event),
            Err(ProfileError::Validation(OntologyError::UnknownField { .. }))
        ));
    }

    #[test]
    fn window_queries_are_time_ordered() {
        let mut store = store("s");
        let schema = OntologySchema::builtin();
        for i in [5, 1, 3, 2, 4] {
            store
                .ingest_event(vital_event(&schema, "heart_rate", 70.0 + i as f64, t(i)))
                .unwrap();
        }
        let window = TimeWindow::new(t(2), t(5)).unwrap();
        let entries = store.entries_in(&FieldPath::new("VitalSign", "heart_rate"), &window);
        let values: Vec<f64> = entries.iter().filter_map(|(_, _, v)| v.as_num()).collect();
        assert_eq!(values, vec![72.0, 73.0, 74.0]);
    }
}
