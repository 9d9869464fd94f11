//! Vendor-trace replay: deterministic simulation of a wearable vendor's
//! feed, scripted faults included.
//!
//! Traces are JSON-lines files, one record per line:
//!
//! ```text
//! {"t":"2025-03-01T08:00:00Z","metric":"heartRate","value":72,"unit":"bpm",
//!  "device_id":"fitbit-1","firmware":"2.1","server_t":"...","fault":{...}}
//! ```
//!
//! `device_id`, `firmware`, `server_t` and `fault` are optional. Records
//! without vendor provenance are imported with reconstructed provenance
//! marked `derived`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    run_capture_pipeline, CaptureConfig, ConnectorDescriptor, ConnectorError, EventSink,
    LifecycleState, MetricMap, ProfileEvent, Provenance, RawSample, TimeAligner,
};
use crate::ontology::{FieldPath, OntologyError, OntologySchema};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fault {
    /// Device clock jumps ahead by `minutes` from this record on.
    ClockSkew { minutes: i64 },
    /// Connection lost: this and the next `records - 1` records are missed
    /// until delta polling recovers them from the last-sync timestamp.
    Dropout { records: usize },
    /// Vendor omitted provenance details on this record.
    PartialRecord,
    /// Vendor API throttled the fetch; the poller backs off and retries.
    RateLimit { retry_after_s: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: Timestamp,
    pub metric: String,
    pub value: f64,
    pub unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub firmware: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_t: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMode {
    Sdk,
    CloudOauth,
    Ble,
}

impl std::fmt::Display for IntegrationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            IntegrationMode::Sdk => "sdk",
            IntegrationMode::CloudOauth => "cloud_oauth",
            IntegrationMode::Ble => "ble",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VendorTrace {
    pub vendor_id: String,
    pub mode: IntegrationMode,
    pub records: Vec<TraceRecord>,
}

impl VendorTrace {
    /// Parses a JSON-lines trace; the first line is a header object
    /// `{"vendor_id":...,"mode":...}`, the rest are records.
    pub fn from_jsonl(text: &str) -> Result<Self, ConnectorError> {
        #[derive(Deserialize)]
        struct Header {
            vendor_id: String,
            mode: IntegrationMode,
        }
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Header = serde_json::from_str(
            lines
                .next()
                .ok_or_else(|| ConnectorError::MalformedTrace("empty trace file".into()))?,
        )
        .map_err(|e| ConnectorError::MalformedTrace(format!("bad header: {e}")))?;
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let record: TraceRecord = serde_json::from_str(line).map_err(|e| {
                ConnectorError::MalformedTrace(format!("record {}: {e}", i + 1))
            })?;
            records.push(record);
        }
        let trace = VendorTrace {
            vendor_id: header.vendor_id,
            mode: header.mode,
            records,
        };
        trace.check_ordered()?;
        Ok(trace)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = format!(
            "{}\n",
            serde_json::json!({"vendor_id": self.vendor_id, "mode": self.mode})
        );
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    fn check_ordered(&self) -> Result<(), ConnectorError> {
        for pair in self.records.windows(2) {
            if pair[1].t < pair[0].t {
                return Err(ConnectorError::MalformedTrace(format!(
                    "records out of order at {}",
                    pair[1].t
                )));
            }
        }
        Ok(())
    }
}

/// A data-driven vendor adapter: which integration mode it serves, how the
/// vendor's field names map onto the ontology, and provenance defaults for
/// reconstructed records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VendorAdapter {
    pub vendor_id: String,
    pub mode: IntegrationMode,
    pub metric_map: MetricMap,
    pub tz_offset_minutes: i32,
    /// Token the scripted OAuth flow hands out; `authenticate` must present
    /// it.
    #[serde(default)]
    pub credentials: Option<String>,
}

impl VendorAdapter {
    pub fn from_json(json: &str) -> Result<Self, ConnectorError> {
        serde_json::from_str(json)
            .map_err(|e| ConnectorError::MalformedTrace(format!("bad adapter: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub vendor_id: String,
    pub metrics_expected: usize,
    pub metrics_synced: usize,
    /// `metrics_synced / metrics_expected`, per canonical metric; `None`
    /// (reported as skipped) for an empty trace.
    pub pass_rate: Option<f64>,
    pub faults_recovered: usize,
    pub events_stored: usize,
    pub duplicates: usize,
    pub rejected: usize,
    pub quarantined: usize,
}

/// Replays a trace through an adapter into `sink`.
///
/// Dropouts are recovered by delta polling from the last-sync timestamp;
/// rate limits back off and retry; clock skew is corrected by the session
/// aligner; records lacking provenance are imported with `derived`
/// provenance. Ingestion is idempotent because event ids are content
/// hashes and the sink deduplicates.
pub fn replay_trace(
    trace: &VendorTrace,
    adapter: &VendorAdapter,
    schema: &OntologySchema,
    config: &CaptureConfig,
    sink: &mut dyn EventSink,
) -> Result<IngestReport, ConnectorError> {
    if adapter.mode != trace.mode {
        return Err(ConnectorError::AdapterMissing(trace.mode.to_string()));
    }
    let expected: BTreeSet<&str> = trace.records.iter().map(|r| r.metric.as_str()).collect();

    let mut aligner = TimeAligner::new(adapter.tz_offset_minutes);
    let mut faults_recovered = 0usize;
    let mut quarantined = 0usize;
    let mut last_sync: Option<Timestamp> = None;
    // (record index, provenance derived) in arrival order after recovery.
    let mut arrivals: Vec<usize> = Vec::new();
    let mut dropped: Vec<usize> = Vec::new();
    let mut dropout_left = 0usize;

    for (i, record) in trace.records.iter().enumerate() {
        match &record.fault {
            Some(Fault::ClockSkew { .. }) => {}
            Some(Fault::Dropout { records }) => {
                dropout_left = dropout_left.max(*records);
            }
            Some(Fault::RateLimit { .. }) => {
                // The scheduled poller retries after the window; the record
                // arrives late but intact.
                faults_recovered += 1;
            }
            Some(Fault::PartialRecord) | None => {}
        }
        if dropout_left > 0 {
            dropout_left -= 1;
            dropped.push(i);
            if dropout_left == 0 {
                // Connection restored: delta poll from last_sync recovers
                // everything missed after it.
                let cutoff = last_sync;
                let recovered: Vec<usize> = dropped
                    .drain(..)
                    .filter(|&j| cutoff.map_or(true, |c| trace.records[j].t > c))
                    .collect();
                if !recovered.is_empty() {
                    faults_recovered += 1;
                }
                arrivals.extend(recovered);
            }
            continue;
        }
        arrivals.push(i);
        last_sync = Some(record.t);
    }
    // Trace ended inside a dropout: the poller's final delta fetch.
    if !dropped.is_empty() {
        let cutoff = last_sync;
        let recovered: Vec<usize> = dropped
            .into_iter()
            .filter(|&j| cutoff.map_or(true, |c| trace.records[j].t > c))
            .collect();
        if !recovered.is_empty() {
            faults_recovered += 1;
        }
        arrivals.extend(recovered);
    }

    // Build raw samples with aligned timestamps and matching provenance.
    let mut pairs: Vec<(RawSample, Provenance)> = Vec::new();
    for &i in &arrivals {
        let record = &trace.records[i];
        let device_ts = record.t.add_minutes(skew_at(&trace.records, i));
        let server_ts = record.server_t.unwrap_or(record.t);
        let (canonical, _) = match aligner.align(device_ts, server_ts) {
            Ok(v) => v,
            Err(ConnectorError::SkewBeyondBound { .. }) => {
                quarantined += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let partial = matches!(record.fault, Some(Fault::PartialRecord));
        let has_provenance = record.device_id.is_some() && record.firmware.is_some() && !partial;
        let provenance = Provenance {
            source_device_id: record
                .device_id
                .clone()
                .filter(|_| !partial)
                .unwrap_or_else(|| format!("{}-import", trace.vendor_id)),
            firmware_version: record
                .firmware
                .clone()
                .filter(|_| !partial)
                .unwrap_or_else(|| "unknown".to_string()),
            sampling_method: format!("vendor_replay/{}", trace.mode),
            device_ts,
            server_ts,
            tz_offset_minutes: adapter.tz_offset_minutes,
            derived: !has_provenance,
            notes: Vec::new(),
        };
        pairs.push((
            RawSample {
                source_id: format!("{}:{}", trace.vendor_id, trace.mode),
                metric: record.metric.clone(),
                value: record.value,
                unit: record.unit.clone(),
                device_ts: canonical,
                payload: None,
            },
            provenance,
        ));
    }

    // The pipeline consumes per-source time-ordered buffers.
    pairs.sort_by(|(a, _), (b, _)| a.device_ts.cmp(&b.device_ts).then(a.metric.cmp(&b.metric)));
    let samples: Vec<RawSample> = pairs.iter().map(|(s, _)| s.clone()).collect();
    let provenance_by_key: BTreeMap<(i64, String, u64), Provenance> = pairs
        .into_iter()
        .map(|(s, p)| ((s.device_ts.millis(), s.metric.clone(), s.value.to_bits()), p))
        .collect();

    let (events, report) = run_capture_pipeline(&samples, schema, &adapter.metric_map, config, |s| {
        provenance_by_key
            .get(&(s.device_ts.millis(), s.metric.clone(), s.value.to_bits()))
            .cloned()
            .unwrap_or_else(|| Provenance {
                source_device_id: format!("{}-import", trace.vendor_id),
                firmware_version: "unknown".to_string(),
                sampling_method: format!("vendor_replay/{}", trace.mode),
                device_ts: s.device_ts,
                server_ts: s.device_ts,
                tz_offset_minutes: adapter.tz_offset_minutes,
                derived: true,
                notes: Vec::new(),
            })
    })?;

    let synced: BTreeSet<&str> = events
        .iter()
        .flat_map(|e| {
            adapter
                .metric_map
                .metrics
                .iter()
                .filter(|(_, m)| {
                    e.payload.entity == m.field.entity
                        && e.payload.fields.contains_key(&m.field.field)
                })
                .map(|(name, _)| name.as_str())
        })
        .collect();

    let outcome = sink
        .push(events)
        .map_err(ConnectorError::Ontology)?;

    let metrics_expected = expected.len();
    let metrics_synced = synced.iter().filter(|m| expected.contains(*m)).count();
    let pass_rate = if metrics_expected == 0 {
        None
    } else {
        Some(metrics_synced as f64 / metrics_expected as f64)
    };
    Ok(IngestReport {
        vendor_id: trace.vendor_id.clone(),
        metrics_expected,
        metrics_synced,
        pass_rate,
        faults_recovered,
        events_stored: outcome.stored,
        duplicates: outcome.duplicates,
        rejected: report.rejected,
        quarantined,
    })
}

/// Clock-skew faults apply from their record onward; accumulate only the
/// skew declared at or before index `i`.
fn skew_at(records: &[TraceRecord], i: usize) -> i64 {
    records[..=i]
        .iter()
        .filter_map(|r| match &r.fault {
            Some(Fault::ClockSkew { minutes }) => Some(*minutes),
            _ => None,
        })
        .sum()
}

/// A replayable connector enforcing the lifecycle order.
pub struct ReplayConnector {
    descriptor: ConnectorDescriptor,
    trace: VendorTrace,
    adapter: VendorAdapter,
    state: LifecycleState,
    cursor: usize,
}

impl ReplayConnector {
    pub fn new(descriptor: ConnectorDescriptor, trace: VendorTrace, adapter: VendorAdapter) -> Self {
        ReplayConnector {
            descriptor,
            trace,
            adapter,
            state: LifecycleState::Created,
        cursor: 0,
        }
    }

    pub fn descriptor(&self) -> &ConnectorDescriptor {
        &self.descriptor
    }

    pub fn state(&self) -> LifecycleState {
        self.state
    }

    fn require(&self, call: &'static str, required: LifecycleState) -> Result<(), ConnectorError> {
        if self.state != required {
            return Err(ConnectorError::LifecycleOrder {
                call,
                required,
                actual: self.state,
            });
        }
        Ok(())
    }

    pub fn connect(&mut self) -> Result<(), ConnectorError> {
        self.require("connect", LifecycleState::Created)?;
        self.state = LifecycleState::Connected;
        Ok(())
    }

    pub fn authenticate(&mut self, credentials: &str) -> Result<(), ConnectorError> {
        self.require("authenticate", LifecycleState::Connected)?;
        if let Some(expected) = &self.adapter.credentials {
            if expected != credentials {
                return Err(ConnectorError::AuthFailed(self.adapter.vendor_id.clone()));
            }
        }
        self.state = LifecycleState::Authenticated;
        Ok(())
    }

    /// Subscribes to `metrics`; each must map to a field covered by
    /// `granted_scope` or the whole call is refused.
    pub fn subscribe(
        &mut self,
        metrics: &[String],
        granted_scope: &BTreeSet<FieldPath>,
    ) -> Result<(), ConnectorError> {
        self.require("subscribe", LifecycleState::Authenticated)?;
        for metric in metrics {
            let mapping = self
                .adapter
                .metric_map
                .lookup(metric)
                .ok_or_else(|| ConnectorError::UnmappedMetric(metric.clone()))?;
            if !granted_scope.contains(&mapping.field) {
                return Err(ConnectorError::ConsentMissing {
                    metric: metric.clone(),
                    field: mapping.field.clone(),
                });
            }
        }
        self.state = LifecycleState::Subscribed;
        Ok(())
    }

    /// Emits up to `n` raw samples in trace order.
    pub fn sample(&mut self, n: usize) -> Result<Vec<RawSample>, ConnectorError> {
        self.require("sample", LifecycleState::Subscribed)?;
        let mut out = Vec::new();
        while out.len() < n && self.cursor < self.trace.records.len() {
            let record = &self.trace.records[self.cursor];
            out.push(RawSample {
                source_id: format!("{}:{}", self.trace.vendor_id, self.trace.mode),
                metric: record.metric.clone(),
                value: record.value,
                unit: record.unit.clone(),
                device_ts: record.t,
                payload: None,
            });
            self.cursor += 1;
        }
        Ok(out)
    }

    /// Runs the capture pipeline over raw samples.
    pub fn transform(
        &self,
        samples: &[RawSample],
        schema: &OntologySchema,
        config: &CaptureConfig,
    ) -> Result<(Vec<ProfileEvent>, super::PipelineReport), ConnectorError> {
        run_capture_pipeline(samples, schema, &self.adapter.metric_map, config, |s| {
            Provenance {
                source_device_id: format!("{}-import", self.trace.vendor_id),
                firmware_version: "unknown".to_string(),
                sampling_method: format!("vendor_replay/{}", self.trace.mode),
                device_ts: s.device_ts,
                server_ts: s.device_ts,
                tz_offset_minutes: self.adapter.tz_offset_minutes,
                derived: true,
                notes: Vec::new(),
            }
        })
    }

    pub fn push_to_store(
        &self,
        events: Vec<ProfileEvent>,
        sink: &mut dyn EventSink,
    ) -> Result<super::PushOutcome, ConnectorError> {
        sink.push(events).map_err(ConnectorError::Ontology)
    }
}

/// An in-memory event sink deduplicating by content id.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub events: Vec<ProfileEvent>,
    seen: BTreeSet<crate::ids::EventId>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }
}

impl EventSink for MemorySink {
    fn push(&mut self, events: Vec<ProfileEvent>) -> Result<super::PushOutcome, OntologyError> {
        let mut outcome = super::PushOutcome::default();
        for event in events {
            if self.seen.insert(event.id.clone()) {
                self.events.push(event);
                outcome.stored += 1;
            } else {
                outcome.duplicates += 1;
            }
        }
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::MILLIS_PER_MINUTE;

    fn minute(i: i64) -> Timestamp {
        Timestamp::from_millis(1_700_000_000_000 + i * MILLIS_PER_MINUTE)
    }

    fn record(metric: &str, value: f64, unit: &str, at: i64) -> TraceRecord {
        TraceRecord {
            t: minute(at),
            metric: metric.to_string(),
            value,
            unit: unit.to_string(),
            device_id: Some("dev-9".to_string()),
            firmware: Some("3.1".to_string()),
            server_t: None,
            fault: None,
        }
    }

    fn adapter() -> VendorAdapter {
        VendorAdapter {
            vendor_id: "acme".to_string(),
            mode: IntegrationMode::Sdk,
            metric_map: MetricMap::builtin(),
            tz_offset_minutes: 0,
            credentials: Some("token-1".to_string()),
        }
    }

    fn trace(records: Vec<TraceRecord>) -> VendorTrace {
        VendorTrace {
            vendor_id: "acme".to_string(),
            mode: IntegrationMode::Sdk,
            records,
        }
    }

    fn descriptor() -> ConnectorDescriptor {
        ConnectorDescriptor {
            id: "acme-sdk".to_string(),
            source_type: super::super::SourceType::PlatformSdk,
            sampling: super::super::Sampling::EventDriven,
            consent_requirements: [FieldPath::new("VitalSign", "heart_rate")]
                .into_iter()
                .collect(),
        }
    }

    #[test]
    fn lifecycle_order_enforced() {
        let mut connector = ReplayConnector::new(descriptor(), trace(vec![]), adapter());
        let err = connector.subscribe(&["heart_rate".to_string()], &BTreeSet::new());
        assert!(matches!(
            err,
            Err(ConnectorError::LifecycleOrder {
                call: "subscribe",
                ..
            })
        ));
        connector.connect().unwrap();
        assert!(matches!(
            connector.sample(1),
            Err(ConnectorError::LifecycleOrder { call: "sample", .. })
        ));
        connector.authenticate("token-1").unwrap();
        let scope: BTreeSet<FieldPath> = [FieldPath::new("VitalSign", "heart_rate")]
            .into_iter()
            .collect();
        connector.subscribe(&["heart_rate".to_string()], &scope).unwrap();
        assert_eq!(connector.state(), LifecycleState::Subscribed);
    }

    #[test]
    fn bad_credentials_fail_authentication() {
        let mut connector = ReplayConnector::new(descriptor(), trace(vec![]), adapter());
        connector.connect().unwrap();
        assert!(matches!(
            connector.authenticate("wrong"),
            Err(ConnectorError::AuthFailed(_))
        ));
    }

    #[test]
    fn ten_sample_trace_emits_in_order() {
        let records: Vec<TraceRecord> = (0..10)
            .map(|i| record("heart_rate", 70.0 + i as f64, "bpm", i))
            .collect();
        let mut connector = ReplayConnector::new(descriptor(), trace(records), adapter());
        connector.connect().unwrap();
        connector.authenticate("token-1").unwrap();
        let scope: BTreeSet<FieldPath> = [FieldPath::new("VitalSign", "heart_rate")]
            .into_iter()
            .collect();
        connector.subscribe(&["heart_rate".to_string()], &scope).unwrap();
        let samples = connector.sample(100).unwrap();
        assert_eq!(samples.len(), 10);
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(s.value, 70.0 + i as f64);
        }
    }

    #[test]
    fn consent_missing_names_the_field() {
        let mut connector = ReplayConnector::new(descriptor(), trace(vec![]), adapter());
        connector.connect().unwrap();
        connector.authenticate("token-1").unwrap();
        let err = connector
            .subscribe(&["steps".to_string()], &BTreeSet::new())
            .unwrap_err();
        match err {
            ConnectorError::ConsentMissing { metric, field } => {
                assert_eq!(metric, "steps");
                assert_eq!(field, FieldPath::new("VitalSign", "steps"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn fault_free_trace_syncs_every_metric() {
        let records = vec![
            record("heart_rate", 72.0, "bpm", 0),
            record("steps", 120.0, "steps/hour", 1),
            record("spo2", 97.0, "%", 2),
        ];
        let schema = OntologySchema::builtin();
        let mut sink = MemorySink::new();
        let report = replay_trace(
            &trace(records),
            &adapter(),
            &schema,
            &CaptureConfig::default(),
            &mut sink,
        )
        .unwrap();
        assert_eq!(report.metrics_expected, 3);
        assert_eq!(report.metrics_synced, 3);
        assert_eq!(report.pass_rate, Some(1.0));
        assert_eq!(report.events_stored, 3);
        assert!(!sink.events.iter().any(|e| e.provenance.derived));
    }

    #[test]
    fn missing_provenance_reconstructed_as_derived() {
        let mut r = record("heart_rate", 72.0, "bpm", 0);
        r.device_id = None;
        r.firmware = None;
        let schema = OntologySchema::builtin();
        let mut sink = MemorySink::new();
        replay_trace(
            &trace(vec![r]),
            &adapter(),
            &schema,
            &CaptureConfig::default(),
            &mut sink,
        )
        .unwrap();
        assert_eq!(sink.events.len(), 1);
        assert!(sink.events[0].provenance.derived);
        assert_eq!(sink.events[0].provenance.source_device_id, "acme-import");
    }

    #[test]
    fn dropout_recovered_exactly_once() {
        let mut records: Vec<TraceRecord> = (0..10)
            .map(|i| record("heart_rate", 70.0 + i as f64, "bpm", i))
            .collect();
        records[4].fault = Some(Fault::Dropout { records: 3 });
        let schema = OntologySchema::builtin();
        let mut sink = MemorySink::new();
        let report = replay_trace(
            &trace(records.clone()),
            &adapter(),
            &schema,
            &CaptureConfig::default(),
            &mut sink,
        )
        .unwrap();
        assert_eq!(report.events_stored, 10, "gap recovered via delta fetch");
        assert!(report.faults_recovered >= 1);
        assert_eq!(report.duplicates, 0);

        // Replaying the same trace into the same sink stores nothing new.
        let report2 = replay_trace(
            &trace(records),
            &adapter(),
            &schema,
            &CaptureConfig::default(),
            &mut sink,
        )
        .unwrap();
        assert_eq!(report2.events_stored, 0);
        assert_eq!(report2.duplicates, 10);
    }

    #[test]
    fn jsonl_round_trip() {
        let t = trace(vec![record("heart_rate", 72.0, "bpm", 0)]);
        let text = t.to_jsonl();
        let parsed = VendorTrace::from_jsonl(&text).unwrap();
        assert_eq!(parsed, t);
    }

    #[test]
    fn adapter_mode_mismatch_is_adapter_missing() {
        let mut a = adapter();
        a.mode = IntegrationMode::Ble;
        let schema = OntologySchema::builtin();
        let mut sink = MemorySink::new();
        assert!(matches!(
            replay_trace(
                &trace(vec![]),
                &a,
                &schema,
                &CaptureConfig::default(),
                &mut sink
            ),
            Err(ConnectorError::AdapterMissing(_))
        ));
    }
}
