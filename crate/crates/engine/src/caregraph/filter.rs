//! Access-level filtering of enriched features.
//!
//! `status_flag` hides numbers behind ok/attention/urgent flags, `aggregate`
//! exposes window statistics, `full` passes raw summaries through. Derived
//! features ride along when the fields they come from are visible at
//! aggregate or above.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AccessLevel, PermissionSet};
use crate::ids::{ActorId, EventId};
use crate::ontology::FieldPath;
use crate::profile::{ActivityClass, Baseline, DerivedFeature, FeatureSet, MetricFeature};
use crate::time::TimeWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusFlag {
    Ok,
    Attention,
    Urgent,
}

impl std::fmt::Display for StatusFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StatusFlag::Ok => "ok",
            StatusFlag::Attention => "attention",
            StatusFlag::Urgent => "urgent",
        };
        f.write_str(s)
    }
}

/// Baseline-relative flag: urgent beyond 3 MADs, attention beyond 1.
pub fn status_flag(feature: &MetricFeature) -> StatusFlag {
    match (&feature.baseline, feature.delta) {
        (Some(baseline), Some(delta)) => {
            let mad = baseline.mad.max(1e-9);
            if delta.abs() > 3.0 * mad {
                StatusFlag::Urgent
            } else if delta.abs() > mad {
                StatusFlag::Attention
            } else {
                StatusFlag::Ok
            }
        }
        _ => StatusFlag::Ok,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub count: u64,
    pub mean: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub missing_fraction: f64,
}

/// One field as an audience is allowed to see it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricView {
    Full {
        stats: WindowStats,
        baseline: Option<Baseline>,
        delta: Option<f64>,
        last_value: Option<f64>,
        last_code: Option<String>,
        unit: Option<String>,
        source_ids: Vec<EventId>,
    },
    Aggregate {
        stats: WindowStats,
        delta: Option<f64>,
        unit: Option<String>,
        source_ids: Vec<EventId>,
    },
    Flag {
        flag: StatusFlag,
        source_ids: Vec<EventId>,
    },
}

impl MetricView {
    pub fn source_ids(&self) -> &[EventId] {
        match self {
            MetricView::Full { source_ids, .. }
            | MetricView::Aggregate { source_ids, .. }
            | MetricView::Flag { source_ids, .. } => source_ids,
        }
    }

    pub fn level(&self) -> AccessLevel {
        match self {
            MetricView::Full { .. } => AccessLevel::Full,
            MetricView::Aggregate { .. } => AccessLevel::Aggregate,
            MetricView::Flag { .. } => AccessLevel::StatusFlag,
        }
    }

    /// The window mean when the level exposes one.
    pub fn mean(&self) -> Option<f64> {
        match self {
            MetricView::Full { stats, .. } | MetricView::Aggregate { stats, .. } => stats.mean,
            MetricView::Flag { .. } => None,
        }
    }

    pub fn delta(&self) -> Option<f64> {
        match self {
            MetricView::Full { delta, .. } | MetricView::Aggregate { delta, .. } => *delta,
            MetricView::Flag { .. } => None,
        }
    }

    /// One-line rendering of this view. Flag views carry no digits.
    pub fn render(&self, path: &FieldPath) -> String {
        match self {
            MetricView::Full {
                stats,
                baseline,
                delta,
                last_value,
                last_code,
                unit,
                ..
            } => {
                let unit = unit.as_deref().unwrap_or("");
                let mut text = match stats.mean {
                    Some(mean) => format!(
                        "{path} mean {mean:.1} {unit} (min {:.1}, max {:.1}, n {})",
                        stats.min.unwrap_or(mean),
                        stats.max.unwrap_or(mean),
                        stats.count
                    ),
                    None => match last_code {
                        Some(code) => format!("{path} last {code} (n {})", stats.count),
                        None => format!("{path} n {}", stats.count),
                    },
                };
                if let (Some(d), Some(b)) = (delta, baseline) {
                    text.push_str(&format!(", delta {d:+.1} vs baseline {:.1}", b.median));
                }
                if let (Some(lv), None) = (last_value, stats.mean) {
                    text.push_str(&format!(", last {lv:.1}"));
                }
                text
            }
            MetricView::Aggregate { stats, delta, unit, .. } => {
                let unit = unit.as_deref().unwrap_or("");
                let mut text = match stats.mean {
                    Some(mean) => {
                        format!("{path} mean {mean:.1} {unit} over window (n {})", stats.count)
                    }
                    None => format!("{path} n {} over window", stats.count),
                };
                if let Some(d) = delta {
                    text.push_str(&format!(", delta {d:+.1}"));
                }
                text
            }
            MetricView::Flag { flag, .. } => format!("{path} status: {flag}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteredFeatureSet {
    pub subject: ActorId,
    pub audience: ActorId,
    pub window: TimeWindow,
    pub views: BTreeMap<FieldPath, MetricView>,
    pub hrv_rmssd_ms: Option<DerivedFeature<f64>>,
    pub activity_class: Option<DerivedFeature<ActivityClass>>,
    pub sleep_score: Option<DerivedFeature<f64>>,
}

impl FilteredFeatureSet {
    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

/// Projects `features` through `perm`. The output contains only permitted
/// fields, each reduced to its granted level.
pub fn filter_fields(features: &FeatureSet, perm: &PermissionSet) -> FilteredFeatureSet {
    let mut views = BTreeMap::new();
    for (path, feature) in &features.metrics {
        let level = perm.level(path);
        let stats = WindowStats {
            count: feature.count,
            mean: feature.mean,
            min: feature.min,
            max: feature.max,
            missing_fraction: feature.missing_fraction,
        };
        let view = match level {
            AccessLevel::None => continue,
            AccessLevel::StatusFlag => MetricView::Flag {
                flag: status_flag(feature),
                source_ids: feature.source_ids.clone(),
            },
            AccessLevel::Aggregate => MetricView::Aggregate {
                stats,
                delta: feature.delta,
                unit: feature.unit.clone(),
                source_ids: feature.source_ids.clone(),
            },
            AccessLevel::Full => MetricView::Full {
                stats,
                baseline: feature.baseline,
                delta: feature.delta,
                last_value: feature.last_value,
                last_code: feature.last_code.clone(),
                unit: feature.unit.clone(),
                source_ids: feature.source_ids.clone(),
            },
        };
        views.insert(path.clone(), view);
    }

    let at_least_aggregate = |path: &FieldPath| perm.level(path) >= AccessLevel::Aggregate;
    let hr = FieldPath::new("VitalSign", "heart_rate");
    let steps = FieldPath::new("VitalSign", "steps");
    let sleep = FieldPath::new("VitalSign", "sleep_duration");

    FilteredFeatureSet {
        subject: features.subject.clone(),
        audience: perm.grantee.clone(),
        window: features.window,
        views,
        hrv_rmssd_ms: features
            .hrv_rmssd_ms
            .clone()
            .filter(|_| at_least_aggregate(&hr)),
        activity_class: features
            .activity_class
            .clone()
            .filter(|_| at_least_aggregate(&steps)),
        sleep_score: features
            .sleep_score
            .clone()
            .filter(|_| at_least_aggregate(&sleep)),
    }
}
