//! Connector lifecycle abstraction, capture pipeline, timestamp alignment
//! and vendor-trace replay.
//!
//! A connector moves through `connect -> authenticate -> subscribe ->
//! sample`; `transform` runs the capture pipeline and `push_to_store` hands
//! the resulting events to an [`EventSink`] (the profile store). Vendor
//! adapters are data-driven mapping tables, so onboarding a vendor is a
//! fixture, not code.

mod align;
mod capture;
mod gatt;
mod trace;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use align::TimeAligner;
pub use capture::{run_capture_pipeline, CaptureConfig, MetricMap, MetricMapping, PipelineReport};
pub use gatt::parse_gatt_heart_rate;
pub use trace::{
    replay_trace, Fault, IngestReport, IntegrationMode, MemorySink, ReplayConnector, TraceRecord,
    VendorAdapter, VendorTrace,
};

use crate::ids::EventId;
use crate::ontology::{OntologyError, TypedEvent};
use crate::ontology::FieldPath;
use crate::time::Timestamp;

#[derive(Debug, Error)]
pub enum ConnectorError {
    #[error("lifecycle violation: `{call}` requires state {required}, connector is {actual}")]
    LifecycleOrder {
        call: &'static str,
        required: LifecycleState,
        actual: LifecycleState,
    },
    #[error("authentication failed for `{0}`")]
    AuthFailed(String),
    #[error("consent scope missing for metric `{metric}` (field {field})")]
    ConsentMissing { metric: String, field: FieldPath },
    #[error("metric `{0}` is not mapped to any ontology field")]
    UnmappedMetric(String),
    #[error("cannot convert unit `{from}` to `{to}` for metric `{metric}`")]
    UnconvertibleUnit {
        metric: String,
        from: String,
        to: String,
    },
    #[error("truncated frame: expected at least {expected} bytes, got {got}")]
    TruncatedFrame { expected: usize, got: usize },
    #[error("value {value} out of plausible range [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },
    #[error("sample skew {skew_ms} ms exceeds bound {bound_ms} ms; sample quarantined")]
    SkewBeyondBound { skew_ms: i64, bound_ms: i64 },
    #[error("trace is malformed: {0}")]
    MalformedTrace(String),
    #[error("no adapter registered for integration mode `{0}`")]
    AdapterMissing(String),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceType {
    BleGatt,
    PlatformSdk,
    VendorCloud,
    OnDevice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Periodic sampling at a fixed rate; `hz` must be positive.
    Periodic { hz: f64 },
    EventDriven,
}

/// Registration metadata for a source: type, sampling frequency and the
/// consent the source requires before it may sample a metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectorDescriptor {
    pub id: String,
    pub source_type: SourceType,
    pub sampling: Sampling,
    pub consent_requirements: BTreeSet<FieldPath>,
}

/// A raw reading as captured from a source, pre-pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub source_id: String,
    pub metric: String,
    pub value: f64,
    pub unit: String,
    pub device_ts: Timestamp,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload: Option<Vec<u8>>,
}

/// Source metadata tying every stored value to its origin. `derived` marks
/// provenance reconstructed at import time rather than reported by the
/// vendor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_device_id: String,
    pub firmware_version: String,
    pub sampling_method: String,
    pub device_ts: Timestamp,
    pub server_ts: Timestamp,
    pub tz_offset_minutes: i32,
    pub derived: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub const MAX_TZ_OFFSET_MINUTES: i32 = 840;

impl Provenance {
    /// Provenance completeness: non-empty device id, both timestamps (always
    /// present by construction) and a plausible timezone offset.
    pub fn is_complete(&self) -> bool {
        !self.source_device_id.is_empty() && self.tz_offset_minutes.abs() <= MAX_TZ_OFFSET_MINUTES
    }
}

/// A typed, unit-normalized observation with full provenance; the atom of
/// all storage and retrieval. The id is a content hash, so re-ingesting the
/// same observation is a no-op.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEvent {
    pub id: EventId,
    pub payload: TypedEvent,
    pub provenance: Provenance,
    pub consent_scope: BTreeSet<FieldPath>,
}

impl ProfileEvent {
    pub fn new(
        payload: TypedEvent,
        provenance: Provenance,
        consent_scope: BTreeSet<FieldPath>,
    ) -> Self {
        let id = content_hash(&payload, &provenance);
        ProfileEvent {
            id,
            payload,
            provenance,
            consent_scope,
        }
    }
}

/// Deterministic content hash over payload and provenance canonical bytes.
pub fn content_hash(payload: &TypedEvent, provenance: &Provenance) -> EventId {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(payload).expect("payload serializes"));
    hasher.update(serde_json::to_vec(provenance).expect("provenance serializes"));
    EventId::new(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    Created,
    Connected,
    Authenticated,
    Subscribed,
}

impl std::fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LifecycleState::Created => "created",
            LifecycleState::Connected => "connected",
            LifecycleState::Authenticated => "authenticated",
            LifecycleState::Subscribed => "subscribed",
        };
        f.write_str(s)
    }
}

/// Where transformed events land; implemented by the profile store.
pub trait EventSink {
    fn push(&mut self, events: Vec<ProfileEvent>) -> Result<PushOutcome, OntologyError>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PushOutcome {
    pub stored: usize,
    pub duplicates: usize,
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn provenance(device_ts: Timestamp) -> Provenance {
        Provenance {
            source_device_id: "dev-1".to_string(),
            firmware_version: "1.0.0".to_string(),
            sampling_method: "test".to_string(),
            device_ts,
            server_ts: device_ts,
            tz_offset_minutes: 0,
            derived: false,
            notes: Vec::new(),
        }
    }
}
