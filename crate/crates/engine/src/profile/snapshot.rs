//! Privacy-limited profile snapshots: the only profile view the insight
//! pipeline ever shows a model.
//!
//! A snapshot is built from an `Allowed` permission set, renders to a
//! compact text within a token budget, and ties every statement to source
//! event ids. Chat context contributes topic hints that bias ordering; it
//! can never add fields beyond `Allowed`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{enrich_features, EnrichConfig, ProfileStore};
use crate::caregraph::{filter_fields, AccessLevel, MetricView, PermissionSet};
use crate::ids::{ActorId, EventId};
use crate::ontology::FieldPath;
use crate::time::TimeWindow;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotConfig {
    /// Whitespace-delimited token budget for the rendering.
    pub token_budget: usize,
    /// Salience multiplier for fields matching a chat topic hint.
    pub hint_boost: f64,
    pub max_hints: usize,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        SnapshotConfig {
            token_budget: 1200,
            hint_boost: 2.0,
            max_hints: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotStatement {
    pub field: FieldPath,
    pub level: AccessLevel,
    /// Human-readable summary; for status-flag fields it carries no digits.
    pub text: String,
    pub source_ids: Vec<EventId>,
    pub salience: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSnapshot {
    pub subject: ActorId,
    pub audience: ActorId,
    pub window: TimeWindow,
    pub statements: Vec<SnapshotStatement>,
    pub topic_hints: Vec<String>,
    pub rendering: String,
    pub token_count: usize,
    pub truncated: bool,
    pub snapshot_id: String,
}

impl ProfileSnapshot {
    pub fn fields(&self) -> impl Iterator<Item = &FieldPath> {
        self.statements.iter().map(|s| &s.field)
    }

    /// Every event id any statement is grounded in.
    pub fn source_ids(&self) -> Vec<EventId> {
        let mut ids: Vec<EventId> = self
            .statements
            .iter()
            .flat_map(|s| s.source_ids.iter().cloned())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

const STOPWORDS: &[&str] = &[
    "the", "and", "for", "with", "how", "what", "has", "have", "was", "were", "are", "this",
    "that", "doing", "about", "over", "last", "week", "today", "is", "of", "to", "in", "on",
];

/// Extracts lowercase topic hints from chat turns.
pub fn topic_hints(chat: &[(String, String)], max_hints: usize) -> Vec<String> {
    let mut hints: Vec<String> = Vec::new();
    for (_, text) in chat {
        for word in text.split(|c: char| !c.is_ascii_alphanumeric()) {
            let word = word.to_ascii_lowercase();
            if word.len() >= 3 && !STOPWORDS.contains(&word.as_str()) && !hints.contains(&word) {
                hints.push(word);
            }
        }
    }
    hints.sort();
    hints.truncate(max_hints);
    hints
}

/// Builds the privacy-limited snapshot for one audience.
pub fn build_snapshot(
    store: &ProfileStore,
    allowed: &PermissionSet,
    chat: &[(String, String)],
    window: TimeWindow,
    enrich_config: &EnrichConfig,
    config: &SnapshotConfig,
) -> ProfileSnapshot {
    let features = enrich_features(store, window, enrich_config);
    let filtered = filter_fields(&features, allowed);
    let hints = topic_hints(chat, config.max_hints);

    let mut statements: Vec<SnapshotStatement> = Vec::new();
    for (path, view) in &filtered.views {
        if view.source_ids().is_empty() {
            continue;
        }
        let text = render_view(path, view);
        let mut salience = match view.delta() {
            Some(delta) => match view {
                MetricView::Full { baseline, .. } => {
                    let scale = baseline.map(|b| b.median.abs()).unwrap_or(1.0).max(1e-9);
                    delta.abs() / scale
                }
                _ => delta.abs().min(1.0),
            },
            None => 0.0,
        };
        if hints
            .iter()
            .any(|h| path.field.contains(h.as_str()) || h.contains(&path.field))
        {
            salience *= config.hint_boost;
            salience += 0.01;
        }
        statements.push(SnapshotStatement {
            field: path.clone(),
            level: view.level(),
            text,
            source_ids: view.source_ids().to_vec(),
            salience,
        });
    }

    // Derived features ride along as statements tied to their sources.
    if let Some(hrv) = &filtered.hrv_rmssd_ms {
        statements.push(SnapshotStatement {
            field: FieldPath::new("VitalSign", "heart_rate"),
            level: allowed.level(&FieldPath::new("VitalSign", "heart_rate")),
            text: format!("VitalSign.heart_rate hrv rmssd {:.1} ms", hrv.value),
            source_ids: hrv.source_ids.clone(),
            salience: 0.0,
        });
    }
    if let Some(activity) = &filtered.activity_class {
        statements.push(SnapshotStatement {
            field: FieldPath::new("VitalSign", "steps"),
            level: allowed.level(&FieldPath::new("VitalSign", "steps")),
            text: format!("VitalSign.steps activity class {}", activity.value),
            source_ids: activity.source_ids.clone(),
            salience: 0.0,
        });
    }
    if let Some(sleep) = &filtered.sleep_score {
        statements.push(SnapshotStatement {
            field: FieldPath::new("VitalSign", "sleep_duration"),
            level: allowed.level(&FieldPath::new("VitalSign", "sleep_duration")),
            text: format!("VitalSign.sleep_duration sleep score {:.0} of 100", sleep.value),
            source_ids: sleep.source_ids.clone(),
            salience: 0.0,
        });
    }

    // Most salient first; ties by recency then path for determinism.
    statements.sort_by(|a, b| {
        b.salience
            .partial_cmp(&a.salience)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| b.source_ids.len().cmp(&a.source_ids.len()))
            .then_with(|| a.field.cmp(&b.field))
            .then_with(|| a.text.cmp(&b.text))
    });

    // Fit the token budget by dropping the least salient statements.
    let header_tokens = 8;
    let mut kept: Vec<SnapshotStatement> = Vec::new();
    let mut tokens = header_tokens;
    let mut truncated = false;
    for statement in statements {
        let line_tokens = statement.text.split_whitespace().count() + 1;
        if tokens + line_tokens > config.token_budget {
            truncated = true;
            continue;
        }
        tokens += line_tokens;
        kept.push(statement);
    }

    let rendering = render_snapshot(&allowed.subject, &window, &kept);
    let token_count = rendering.split_whitespace().count();

    let mut hasher = Sha256::new();
    hasher.update(allowed.subject.as_str().as_bytes());
    hasher.update(allowed.grantee.as_str().as_bytes());
    hasher.update(window.start.millis().to_le_bytes());
    hasher.update(window.end.millis().to_le_bytes());
    hasher.update(rendering.as_bytes());
    let snapshot_id = hex::encode(hasher.finalize());

    ProfileSnapshot {
        subject: allowed.subject.clone(),
        audience: allowed.grantee.clone(),
        window,
        statements: kept,
        topic_hints: hints,
        rendering,
        token_count,
        truncated,
        snapshot_id,
    }
}

fn render_snapshot(subject: &ActorId, window: &TimeWindow, statements: &[SnapshotStatement]) -> String {
    let mut out = format!("profile snapshot for subject {subject} window {window}\n");
    if statements.is_empty() {
        out.push_str("no shared data\n");
        return out;
    }
    for statement in statements {
        let refs: Vec<String> = statement
            .source_ids
            .iter()
            .take(2)
            .map(|id| id.as_str().chars().take(8).collect())
            .collect();
        out.push_str(&format!("- {} [refs:{}]\n", statement.text, refs.join(",")));
    }
    out
}
