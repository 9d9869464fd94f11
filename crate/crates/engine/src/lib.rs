//! Collective-care coordination engine.
//!
//! The engine treats a *care circle* (one subject plus the family members,
//! friends and clinicians who look after them) as the unit of design. It
//! provides:
//!
//! - a versioned, text-file ontology that types every stored observation
//!   ([`ontology`]),
//! - a permissioned care graph with time-bounded, per-field, revocable
//!   consent ([`caregraph`]),
//! - connector abstractions for wearables and vendor feeds, with a capture
//!   pipeline, timestamp alignment and trace replay ([`connectors`]),
//! - sealed (encrypted-at-rest) record storage, key rotation and a
//!   hash-chained tamper-evident audit log ([`vault`]),
//! - a profile store with feature enrichment and privacy-limited snapshots
//!   ([`profile`]),
//! - deterministic embeddings and an exact top-k vector index
//!   ([`retrieval`]),
//! - and a two-tier generate/verify insight pipeline with per-actor
//!   briefings, rate limiting and deterministic fallback ([`pipeline`]).
//!
//! [`engine::CareEngine`] wires the pieces together behind one facade.

pub mod caregraph;
pub mod connectors;
// pub mod engine;
pub mod ids;
pub mod ontology;
// pub mod pipeline;
pub mod profile;
pub mod retrieval;
pub mod time;
pub mod vault;

// pub use engine::CareEngine;
pub use ids::{ActorId, CircleId, ConsentId, EventId, ItemId, KeyId};
pub use time::{TimeWindow, Timestamp};

/// Built-in default assets shipped with the engine.
pub mod defaults {
    /// Canonical ontology source text.
    pub const ONTOLOGY_TXT: &str = include_str!("../assets/ontology.txt");
    /// Canonical role consent templates (JSON).
    pub const ROLES_JSON: &str = include_str!("../assets/roles.json");
}
