//! Feature enrichment: per-metric aggregates, baselines and deltas, HRV,
//! activity class and sleep score.
//!
//! Enrichment is deterministic given store contents: same store and window
//! produce byte-identical feature sets. Missing data shows up in
//! `missing_fraction`; it is never imputed into aggregates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ProfileStore;
use crate::ids::{ActorId, EventId};
use crate::ontology::FieldPath;
use crate::time::{TimeWindow, Timestamp, MILLIS_PER_DAY, MILLIS_PER_HOUR, MILLIS_PER_MINUTE};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnrichConfig {
    /// Expected sampling interval per metric, ms. Missingness is measured
    /// against these slots over the observed span of the window.
    pub cadences_ms: BTreeMap<FieldPath, i64>,
    pub baseline_horizon_days: i64,
    /// Minimum daily points before a baseline is defined.
    pub min_baseline_samples: usize,
    /// Steps/hour thresholds for activity classification.
    pub sedentary_max: f64,
    pub light_max: f64,
    pub moderate_max: f64,
    /// Sleep score: duration weight vs an 8 h target, rest on efficiency.
    pub sleep_target_minutes: f64,
    pub sleep_duration_weight: f64,
}

impl Default for EnrichConfig {
    fn default() -> Self {
        let mut cadences_ms = BTreeMap::new();
        cadences_ms.insert(FieldPath::new("VitalSign", "heart_rate"), MILLIS_PER_MINUTE);
        cadences_ms.insert(FieldPath::new("VitalSign", "steps"), MILLIS_PER_HOUR);
        cadences_ms.insert(FieldPath::new("VitalSign", "sleep_duration"), MILLIS_PER_DAY);
        cadences_ms.insert(
            FieldPath::new("VitalSign", "sleep_efficiency"),
            MILLIS_PER_DAY,
        );
        cadences_ms.insert(FieldPath::new("VitalSign", "bp_systolic"), MILLIS_PER_DAY);
        cadences_ms.insert(FieldPath::new("VitalSign", "bp_diastolic"), MILLIS_PER_DAY);
        EnrichConfig {
            cadences_ms,
            baseline_horizon_days: 14,
            min_baseline_samples: 7,
            sedentary_max: 250.0,
            light_max: 1000.0,
            moderate_max: 3000.0,
            sleep_target_minutes: 480.0,
            sleep_duration_weight: 0.6,
        }
    }
}

/// Rolling robust baseline: median and MAD of daily medians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub median: f64,
    pub mad: f64,
    pub days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFeature {
    pub path: FieldPath,
    pub unit: Option<String>,
    pub count: u64,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub last_value: Option<f64>,
    pub last_code: Option<String>,
    pub last_ts: Option<Timestamp>,
    /// Fraction of expected sampling slots without data, within the
    /// observed span of the window; 1.0 when the metric is absent.
    pub missing_fraction: f64,
    pub baseline: Option<Baseline>,
    /// Window mean minus baseline median; suppressed without a baseline.
    pub delta: Option<f64>,
    /// Set when history exists but is too short for a baseline.
    pub insufficient_history: bool,
    pub source_ids: Vec<EventId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityClass {
    Sedentary,
    Light,
    Moderate,
    Vigorous,
}

impl std::fmt::Display for ActivityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ActivityClass::Sedentary => "sedentary",
            ActivityClass::Light => "light",
            ActivityClass::Moderate => "moderate",
            ActivityClass::Vigorous => "vigorous",
        };
        f.write_str(s)
    }
}

/// A derived feature together with the events it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedFeature<T> {
    pub value: T,
    pub source_ids: Vec<EventId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub subject: ActorId,
    pub window: TimeWindow,
    pub metrics: BTreeMap<FieldPath, MetricFeature>,
    /// RMSSD over inter-beat intervals reconstructed from minute-level HR
    /// (60000/HR ms); an approximation of true beat-level HRV.
    pub hrv_rmssd_ms: Option<DerivedFeature<f64>>,
    pub activity_class: Option<DerivedFeature<ActivityClass>>,
    /// 0-100: duration ratio against the target (weighted) plus efficiency.
    pub sleep_score: Option<DerivedFeature<f64>>,
}

impl FeatureSet {
    pub fn empty(subject: &ActorId, window: TimeWindow) -> Self {
        FeatureSet {
            subject: subject.clone(),
            window,
            metrics: BTreeMap::new(),
            hrv_rmssd_ms: None,
            activity_class: None,
            sleep_score: None,
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("feature set serializes")
    }

    /// Mean missing fraction over metrics with a configured cadence.
    pub fn overall_missing_fraction(&self, config: &EnrichConfig) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (path, feature) in &self.metrics {
            if config.cadences_ms.contains_key(path) {
                sum += feature.missing_fraction;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn total_count(&self) -> u64 {
        self.metrics.values().map(|m| m.count).sum()
    }
}

/// Computes the rolling baseline for `metric` from daily medians over
/// `[asof - horizon, asof)`. `None` (insufficient history) below the
/// configured minimum number of daily points.
pub fn compute_baseline(
    store: &ProfileStore,
    metric: &FieldPath,
    asof: Timestamp,
    config: &EnrichConfig,
) -> Option<Baseline> {
    let horizon_start = asof.add_days(-config.baseline_horizon_days);
    let window = TimeWindow::new(horizon_start, asof).ok()?;
    let mut per_day: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for (ts, _, value) in store.entries_in(metric, &window) {
        if let Some(v) = value.as_num() {
            per_day.entry(ts.millis().div_euclid(MILLIS_PER_DAY)).or_default().push(v);
        }
    }
    if per_day.len() < config.min_baseline_samples {
        return None;
    }
    let daily_medians: Vec<f64> = per_day.values().map(|vs| median(vs.clone())).collect();
    let median_of_days = median(daily_medians.clone());
    let mad = median(
        daily_medians
            .iter()
            .map(|v| (v - median_of_days).abs())
            .collect(),
    );
    Some(Baseline {
        median: median_of_days,
        mad,
        days: per_day.len(),
    })
}

/// `current - baseline`.
pub fn compute_delta(current: f64, baseline: &Baseline) -> f64 {
    current - baseline.median
}

/// Enriches everything the store holds inside `window`.
pub fn enrich_features(store: &ProfileStore, window: TimeWindow, config: &EnrichConfig) -> FeatureSet {
    let mut set = FeatureSet::empty(store.subject(), window);

    let paths: Vec<FieldPath> = store.indexed_paths().cloned().collect();
    for path in paths {
        let entries = store.entries_in(&path, &window);
        if entries.is_empty() {
            continue;
        }
        let unit = store
            .schema()
            .field_def(&path)
            .and_then(|def| def.unit.clone());
        let mut numeric: Vec<(Timestamp, f64)> = Vec::new();
        let mut last_code: Option<String> = None;
        let mut last_ts: Option<Timestamp> = None;
        let mut source_ids: Vec<EventId> = Vec::new();
        for (ts, id, value) in &entries {
            source_ids.push((*id).clone());
            last_ts = Some(**ts);
            match value.as_num() {
                Some(v) => numeric.push((**ts, v)),
                None => last_code = value.as_code().map(str::to_string),
            }
        }

        let (mean, min, max, last_value) = if numeric.is_empty() {
            (None, None, None, None)
        } else {
            let sum: f64 = numeric.iter().map(|(_, v)| v).sum();
            let mean = sum / numeric.len() as f64;
            let min = numeric.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
            let max = numeric
                .iter()
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            (Some(mean), Some(min), Some(max), numeric.last().map(|(_, v)| *v))
        };

        let missing_fraction = match config.cadences_ms.get(&path) {
            Some(&cadence) => missing_fraction_over_span(&entries, cadence),
            None => 0.0,
        };

        let baseline = if numeric.is_empty() {
            None
        } else {
            compute_baseline(store, &path, window.start, config)
        };
        let has_history = !numeric.is_empty()
            && store
                .entries_in(
                    &path,
                    &TimeWindow::new(
                        window.start.add_days(-config.baseline_horizon_days),
                        window.start,
                    )
                    .unwrap_or(window),
                )
                .iter()
                .any(|(_, _, v)| v.as_num().is_some());
        let delta = match (&baseline, mean) {
            (Some(b), Some(m)) => Some(compute_delta(m, b)),
            _ => None,
        };

        set.metrics.insert(
            path.clone(),
            MetricFeature {
                path,
                unit,
                count: entries.len() as u64,
                mean,
                min,
                max,
                last_value,
                last_code,
                last_ts,
                missing_fraction,
                baseline,
                delta,
                insufficient_history: baseline.is_none() && has_history,
                source_ids,
            },
        );
    }

    set.hrv_rmssd_ms = hrv_rmssd(store, &window);
    set.activity_class = activity_class(&set, config);
    set.sleep_score = sleep_score(&set, config);
    set
}

/// Missingness within the observed span: expected slots between the first
/// and last observation at the metric's cadence, minus the occupied ones.
fn missing_fraction_over_span(
    entries: &[(&Timestamp, &EventId, &super::IndexedValue)],
    cadence_ms: i64,
) -> f64 {
    if entries.is_empty() {
        return 1.0;
    }
    let first = entries.first().unwrap().0.millis();
    let last = entries.last().unwrap().0.millis();
    let slots = (last - first) / cadence_ms + 1;
    if slots <= 0 {
        return 0.0;
    }
    let mut occupied: Vec<i64> = entries
        .iter()
        .map(|(ts, _, _)| (ts.millis() - first) / cadence_ms)
        .collect();
    occupied.dedup();
    let missing = slots - occupied.len() as i64;
    (missing.max(0) as f64) / slots as f64
}

fn hrv_rmssd(store: &ProfileStore, window: &TimeWindow) -> Option<DerivedFeature<f64>> {
    let hr_path = FieldPath::new("VitalSign", "heart_rate");
    let entries = store.entries_in(&hr_path, window);
    let samples: Vec<(Timestamp, EventId, f64)> = entries
        .iter()
        .filter_map(|(ts, id, v)| v.as_num().map(|n| (**ts, (*id).clone(), n)))
        .filter(|(_, _, v)| *v > 0.0)
        .collect();
    if samples.len() < 2 {
        return None;
    }
    let intervals: Vec<f64> = samples.iter().map(|(_, _, hr)| 60_000.0 / hr).collect();
    let diffs: Vec<f64> = intervals.windows(2).map(|w| w[1] - w[0]).collect();
    let mean_sq = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
    Some(DerivedFeature {
        value: mean_sq.sqrt(),
        source_ids: samples.into_iter().map(|(_, id, _)| id).collect(),
    })
}

fn activity_class(set: &FeatureSet, config: &EnrichConfig) -> Option<DerivedFeature<ActivityClass>> {
    let steps = set.metrics.get(&FieldPath::new("VitalSign", "steps"))?;
    let mean = steps.mean?;
    let class = if mean < config.sedentary_max {
        ActivityClass::Sedentary
    } else if mean < config.light_max {
        ActivityClass::Light
    } else if mean < config.moderate_max {
        ActivityClass::Moderate
    } else {
        ActivityClass::Vigorous
    };
    Some(DerivedFeature {
        value: class,
        source_ids: steps.source_ids.clone(),
    })
}

fn sleep_score(set: &FeatureSet, config: &EnrichConfig) -> Option<DerivedFeature<f64>> {
    let duration = set.metrics.get(&FieldPath::new("VitalSign", "sleep_duration"))?;
    let mean_duration = duration.mean?;
    let mut source_ids = duration.source_ids.clone();
    let efficiency = set
        .metrics
        .get(&FieldPath::new("VitalSign", "sleep_efficiency"))
        .and_then(|m| {
            source_ids.extend(m.source_ids.iter().cloned());
            m.mean
        })
        .unwrap_or(100.0);
    let ratio = (mean_duration / config.sleep_target_minutes).min(1.0);
    let w = config.sleep_duration_weight;
    let score = (w * ratio * 100.0 + (1.0 - w) * efficiency).clamp(0.0, 100.0);
    Some(DerivedFeature {
        value: score,
        source_ids,
    })
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}
