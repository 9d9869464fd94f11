//! Care circles, actor roles and time-bounded per-field consent.
//!
//! The graph is the enforcement substrate for every read path: grants and
//! revocations mutate it through a single writer and are audited; permission
//! resolution is a pure read against a point-in-time view.

mod filter;
mod roles;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use filter::{filter_fields, FilteredFeatureSet, MetricView, StatusFlag};
pub use roles::{RoleTemplate, RoleTemplates};

use crate::ids::{ActorId, CircleId, ConsentId};
use crate::ontology::{FieldPath, OntologySchema};
use crate::time::Timestamp;
use crate::vault::{AuditChain, AuditKind, AuditPayload, VaultError};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("actor `{0}` is unknown")]
    UnknownActor(ActorId),
    #[error("circle `{0}` is unknown")]
    UnknownCircle(CircleId),
    #[error("consent `{0}` is unknown")]
    UnknownConsent(ConsentId),
    #[error("grantee `{grantee}` shares no circle where `{grantor}` is the subject")]
    NotInSharedCircle { grantor: ActorId, grantee: ActorId },
    #[error("consent interval is malformed: valid_from {from} must precede valid_until {until}")]
    MalformedInterval { from: Timestamp, until: Timestamp },
    #[error("consent `{0}` is already revoked")]
    AlreadyRevoked(ConsentId),
    #[error("revocation time {at} precedes valid_from {from}")]
    RevocationBeforeStart { at: Timestamp, from: Timestamp },
    #[error("consent covers no fields but grants level {0}")]
    EmptyFieldSet(AccessLevel),
    #[error("circle `{circle}` must have exactly one subject member")]
    SubjectMemberInvalid { circle: CircleId },
    #[error("circle `{circle}` needs at least two members")]
    CircleTooSmall { circle: CircleId },
    #[error("circle member `{actor}` is not a registered actor")]
    UnregisteredMember { actor: ActorId },
    #[error(transparent)]
    Audit(#[from] VaultError),
}

/// Closed set of care-circle roles. Every role maps to a briefing template
/// and a consent template.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Subject,
    CarePrimary,
    FamilyMonitor,
    NudgeOnly,
    Clinician,
}

impl Role {
    pub const ALL: [Role; 5] = [
        Role::Subject,
        Role::CarePrimary,
        Role::FamilyMonitor,
        Role::NudgeOnly,
        Role::Clinician,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Subject => "subject",
            Role::CarePrimary => "care_primary",
            Role::FamilyMonitor => "family_monitor",
            Role::NudgeOnly => "nudge_only",
            Role::Clinician => "clinician",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Graded visibility. Ordered: a higher level strictly reveals more, and the
/// maximum wins when grants overlap.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(rename_all = "snake_case")]
pub enum AccessLevel {
    #[default]
    None,
    StatusFlag,
    Aggregate,
    Full,
}

impl fmt::Display for AccessLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AccessLevel::None => "none",
            AccessLevel::StatusFlag => "status_flag",
            AccessLevel::Aggregate => "aggregate",
            AccessLevel::Full => "full",
        };
        f.write_str(s)
    }
}

/// A durable, revocable grant from a subject to an actor covering specific
/// fields for a bounded interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsentRecord {
    pub id: ConsentId,
    pub grantor: ActorId,
    pub grantee: ActorId,
    pub fields: BTreeSet<FieldPath>,
    pub access_level: AccessLevel,
    pub valid_from: Timestamp,
    pub valid_until: Timestamp,
    pub revoked_at: Option<Timestamp>,
    pub purpose: String,
}

impl ConsentRecord {
    /// Whether the grant contributes fields at instant `now`
    /// (point-in-time semantics: a revocation only masks later instants).
    pub fn active_at(&self, now: Timestamp) -> bool {
        self.valid_from <= now
            && now < self.valid_until
            && self.revoked_at.map_or(true, |r| now < r)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CareCircle {
    pub id: CircleId,
    pub subject: ActorId,
    pub members: Vec<(ActorId, Role)>,
}

impl CareCircle {
    pub fn role_of(&self, actor: &ActorId) -> Option<Role> {
        self.members
            .iter()
            .find(|(id, _)| id == actor)
            .map(|(_, role)| *role)
    }

    pub fn contains(&self, actor: &ActorId) -> bool {
        self.role_of(actor).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorProfile {
    pub id: ActorId,
    pub display_name: String,
    pub roles_by_circle: BTreeMap<CircleId, Role>,
}

/// The resolved, time-sliced view of what `grantee` may see of `subject`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermissionSet {
    pub grantee: ActorId,
    pub subject: ActorId,
    pub fields: BTreeMap<FieldPath, AccessLevel>,
    pub evaluated_at: Timestamp,
}

impl PermissionSet {
    pub fn empty(grantee: &ActorId, subject: &ActorId, now: Timestamp) -> Self {
        PermissionSet {
            grantee: grantee.clone(),
            subject: subject.clone(),
            fields: BTreeMap::new(),
            evaluated_at: now,
        }
    }

    pub fn level(&self, path: &FieldPath) -> AccessLevel {
        self.fields.get(path).copied().unwrap_or(AccessLevel::None)
    }

    pub fn allows(&self, path: &FieldPath) -> bool {
        self.level(path) > AccessLevel::None
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field_set(&self) -> BTreeSet<FieldPath> {
        self.fields.keys().cloned().collect()
    }

    /// Restricts this set to `requested`, keeping levels. Never a superset
    /// of `self`.
    pub fn intersect(&self, requested: &BTreeSet<FieldPath>) -> PermissionSet {
        PermissionSet {
            grantee: self.grantee.clone(),
            subject: self.subject.clone(),
            fields: self
                .fields
                .iter()
                .filter(|(path, _)| requested.contains(path))
                .map(|(path, level)| (path.clone(), *level))
                .collect(),
            evaluated_at: self.evaluated_at,
        }
    }
}

/// The scope of an [`apply_acls`] request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldRequest {
    /// Everything visible (the usual query scope).
    All,
    /// A specific set of field paths.
    Fields(BTreeSet<FieldPath>),
}

/// Actors, circles and consents. Mutations go through [`CareGraph::grant`]
/// and [`CareGraph::revoke`]; reads are pure.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CareGraph {
    pub actors: BTreeMap<ActorId, ActorProfile>,
    pub circles: BTreeMap<CircleId, CareCircle>,
    pub consents: BTreeMap<ConsentId, ConsentRecord>,
}

impl CareGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_actor(&mut self, id: ActorId, display_name: &str) -> &mut ActorProfile {
        self.actors.entry(id.clone()).or_insert_with(|| ActorProfile {
            id,
            display_name: display_name.to_string(),
            roles_by_circle: BTreeMap::new(),
        })
    }

    pub fn actor(&self, id: &ActorId) -> Result<&ActorProfile, GraphError> {
        self.actors
            .get(id)
            .ok_or_else(|| GraphError::UnknownActor(id.clone()))
    }

    pub fn circle(&self, id: &CircleId) -> Result<&CareCircle, GraphError> {
        self.circles
            .get(id)
            .ok_or_else(|| GraphError::UnknownCircle(id.clone()))
    }

    /// Registers a circle after checking its structural invariants: members
    /// are known actors, exactly one subject member (the circle's subject),
    /// and at least two members overall.
    pub fn add_circle(&mut self, circle: CareCircle) -> Result<(), GraphError> {
        if circle.members.len() < 2 {
            return Err(GraphError::CircleTooSmall {
                circle: circle.id.clone(),
            });
        }
        let subject_members: Vec<&ActorId> = circle
            .members
            .iter()
            .filter(|(_, role)| *role == Role::Subject)
            .map(|(id, _)| id)
            .collect();
        if subject_members.len() != 1 || subject_members[0] != &circle.subject {
            return Err(GraphError::SubjectMemberInvalid {
                circle: circle.id.clone(),
            });
        }
        for (member, _) in &circle.members {
            if !self.actors.contains_key(member) {
                return Err(GraphError::UnregisteredMember {
                    actor: member.clone(),
                });
            }
        }
        for (member, role) in &circle.members {
            self.actors
                .get_mut(member)
                .unwrap()
                .roles_by_circle
                .insert(circle.id.clone(), *role);
        }
        self.circles.insert(circle.id.clone(), circle);
        Ok(())
    }

    /// Circles where `subject` is the subject and `actor` is a member.
    pub fn shared_circles(&self, actor: &ActorId, subject: &ActorId) -> Vec<&CareCircle> {
        self.circles
            .values()
            .filter(|c| &c.subject == subject && c.contains(actor))
            .collect()
    }

    /// Stores a consent after validating the interval, the field set and
    /// that the grantor is the subject of a circle containing the grantee.
    /// Appends a `grant` record to the audit chain.
    pub fn grant(
        &mut self,
        consent: ConsentRecord,
        audit: &mut AuditChain,
        now: Timestamp,
    ) -> Result<ConsentId, GraphError> {
        if consent.valid_from >= consent.valid_until {
            return Err(GraphError::MalformedInterval {
                from: consent.valid_from,
                until: consent.valid_until,
            });
        }
        if consent.fields.is_empty() && consent.access_level != AccessLevel::None {
            return Err(GraphError::EmptyFieldSet(consent.access_level));
        }
        self.actor(&consent.grantor)?;
        self.actor(&consent.grantee)?;
        if self
            .shared_circles(&consent.grantee, &consent.grantor)
            .is_empty()
        {
            return Err(GraphError::NotInSharedCircle {
                grantor: consent.grantor.clone(),
                grantee: consent.grantee.clone(),
            });
        }

        let id = consent.id.clone();
        let mut payload = AuditPayload::new();
        payload.insert("consent_id".to_string(), id.to_string());
        payload.insert("grantor".to_string(), consent.grantor.to_string());
        payload.insert("grantee".to_string(), consent.grantee.to_string());
        payload.insert("access_level".to_string(), consent.access_level.to_string());
        payload.insert("field_count".to_string(), consent.fields.len().to_string());
        audit.append(AuditKind::Grant, payload, now)?;

        self.consents.insert(id.clone(), consent);
        Ok(id)
    }

    /// Marks a consent revoked at `at`. Resolutions at instants before `at`
    /// still see the grant (point-in-time semantics), so audits replay
    /// faithfully.
    pub fn revoke(
        &mut self,
        id: &ConsentId,
        at: Timestamp,
        audit: &mut AuditChain,
    ) -> Result<&ConsentRecord, GraphError> {
        let consent = self
            .consents
            .get_mut(id)
            .ok_or_else(|| GraphError::UnknownConsent(id.clone()))?;
        if consent.revoked_at.is_some() {
            return Err(GraphError::AlreadyRevoked(id.clone()));
        }
        if at < consent.valid_from {
            return Err(GraphError::RevocationBeforeStart {
                at,
                from: consent.valid_from,
            });
        }
        consent.revoked_at = Some(at);

        let mut payload = AuditPayload::new();
        payload.insert("consent_id".to_string(), id.to_string());
        payload.insert("revoked_at".to_string(), at.to_rfc3339());
        audit.append(AuditKind::Revoke, payload, at)?;

        Ok(&self.consents[id])
    }

    /// Resolves what `actor` may see of `subject` at instant `now`: the
    /// union of all active grants with the maximum level winning per field.
    /// A subject resolving against itself gets full access to every data
    /// field in the schema. Total: unknown ids and disjoint actors resolve
    /// to the empty set.
    pub fn resolve_permissions(
        &self,
        schema: &OntologySchema,
        actor: &ActorId,
        subject: &ActorId,
        now: Timestamp,
    ) -> PermissionSet {
        if actor == subject {
            let fields = schema
                .data_field_paths()
                .into_iter()
                .map(|path| (path, AccessLevel::Full))
                .collect();
            return PermissionSet {
                grantee: actor.clone(),
                subject: subject.clone(),
                fields,
                evaluated_at: now,
            };
        }
        if self.shared_circles(actor, subject).is_empty() {
            return PermissionSet::empty(actor, subject, now);
        }
        let mut fields: BTreeMap<FieldPath, AccessLevel> = BTreeMap::new();
        for consent in self.consents.values() {
            if &consent.grantor != subject || &consent.grantee != actor {
                continue;
            }
            if !consent.active_at(now) {
                continue;
            }
            for path in &consent.fields {
                let entry = fields.entry(path.clone()).or_insert(AccessLevel::None);
                *entry = (*entry).max(consent.access_level);
            }
        }
        fields.retain(|_, level| *level > AccessLevel::None);
        PermissionSet {
            grantee: actor.clone(),
            subject: subject.clone(),
            fields,
            evaluated_at: now,
        }
    }

    /// `Allowed = requested ∩ resolve_permissions(...)`; never a superset of
    /// the permission set.
    pub fn apply_acls(
        &self,
        schema: &OntologySchema,
        actor: &ActorId,
        subject: &ActorId,
        requested: &FieldRequest,
        now: Timestamp,
    ) -> PermissionSet {
        let resolved = self.resolve_permissions(schema, actor, subject, now);
        match requested {
            FieldRequest::All => resolved,
            FieldRequest::Fields(set) => resolved.intersect(set),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vault::AuditChain;

    fn t(ms: i64) -> Timestamp {
        Timestamp::from_millis(ms)
    }

    fn schema() -> OntologySchema {
        OntologySchema::builtin()
    }

    /// A circle: subject `s`, primary `p`, monitor `m`, nudge `n`.
    fn graph() -> CareGraph {
        let mut graph = CareGraph::new();
        graph.add_actor(ActorId::new("s"), "Subject");
        graph.add_actor(ActorId::new("p"), "Primary");
        graph.add_actor(ActorId::new("m"), "Monitor");
        graph.add_actor(ActorId::new("n"), "Nudge");
        graph.add_actor(ActorId::new("x"), "Outsider");
        graph
            .add_circle(CareCircle {
                id: CircleId::new("c1"),
                subject: ActorId::new("s"),
                members: vec![
                    (ActorId::new("s"), Role::Subject),
                    (ActorId::new("p"), Role::CarePrimary),
                    (ActorId::new("m"), Role::FamilyMonitor),
                    (ActorId::new("n"), Role::NudgeOnly),
                ],
            })
            .unwrap();
        graph
    }

    fn consent_from_template(
        id: &str,
        grantee: &str,
        role: Role,
        from: Timestamp,
        until: Timestamp,
    ) -> ConsentRecord {
        let templates = RoleTemplates::builtin();
        let template = templates.template(role).unwrap();
        ConsentRecord {
            id: ConsentId::new(id),
            grantor: ActorId::new("s"),
            grantee: ActorId::new(grantee),
            fields: template.fields.iter().cloned().collect(),
            access_level: template.access_level,
            valid_from: from,
            valid_until: until,
            revoked_at: None,
            purpose: format!("{role} template"),
        }
    }

    #[test]
    fn monitor_template_grant_exposes_seven_fields() {
        let mut graph = graph();
        let mut audit = AuditChain::in_memory();
        let consent = consent_from_template("g1", "m", Role::FamilyMonitor, t(0), t(30 * 86_400_000));
        graph.grant(consent, &mut audit, t(0)).unwrap();
        let perm =
            graph.resolve_permissions(&schema(), &ActorId::new("m"), &ActorId::new("s"), t(1000));
        assert_eq!(perm.fields.len(), 7);
        assert!(perm
            .fields
            .values()
            .all(|level| *level == AccessLevel::Aggregate));
        assert_eq!(audit.len(), 1);
    }

    #[test]
    fn primary_template_grant_exposes_fifteen_fields() {
        let mut graph = graph();
        let mut audit = AuditChain::in_memory();
        let consent = consent_from_template("g1", "p", Role::CarePrimary, t(0), t(86_400_000));
        graph.grant(consent, &mut audit, t(0)).unwrap();
        let perm =
            graph.resolve_permissions(&schema(), &ActorId::new("p"), &ActorId::new("s"), t(1000));
        assert_eq!(perm.fields.len(), 15);
    }

    #[test]
    fn malformed_interval_rejected() {
        let mut graph = graph();
        let mut audit = AuditChain::in_memory();
        let consent = consent_from_template("g1", "m", Role::FamilyMonitor, t(1000), t(10));
        assert!(matches!(
            graph.grant(consent, &mut audit, t(0)),
            Err(GraphError::MalformedInterval { .. })
        ));
        assert_eq!(audit.len(), 0, "failed grants are not audited");
    }

    #[test]
    fn grant_outside_shared_circle_rejected() {
        let mut graph = graph();
        let mut audit = AuditChain::in_memory();
        let consent = consent_from_template("g1", "x", Role::FamilyMonitor, t(0), t(1000));
        assert!(matches!(
            graph.grant(consent, &mut audit, t(0)),
            Err(GraphError::NotInSharedCircle { .. })
        ));
    }

    #[test]
    fn revocation_is_point_in_time() {
        let mut graph = graph();
        let mut audit = AuditChain::in_memory();
        let consent = consent_from_template("g1", "m", Role::FamilyMonitor, t(0), t(1_000_000));
        graph.grant(consent, &mut audit, t(0)).unwrap();
        graph.revoke(&ConsentId::new("g1"), t(5000), &mut audit).unwrap();

        let m = ActorId::new("m");
        let s = ActorId::new("s");
        let before = graph.resolve_permissions(&schema(), &m, &s, t(4999));
        assert_eq!(before.fields.len(), 7, "historical resolution unchanged");
        let after = graph.resolve_permissions(&schema(), &m, &s, t(5000));
        assert!(after.is_empty(), "fields absent from revocation onward");
        assert_eq!(audit.len(), 2);
    }

    #[test]
    fn revoke_unknown_and_double_revoke_errors() {
        let mut graph = graph();
        let mut audit = AuditChain::in_memory();
        assert!(matches!(
            graph.revoke(&ConsentId::new("nope"), t(0), &mut audit),
            Err(GraphError::UnknownConsent(_))
        ));
        let consent = consent_from_template("g1", "m", Role::FamilyMonitor, t(0), t(1_000_000));
        graph.grant(consent, &mut audit, t(0)).unwrap();
        graph.revoke(&ConsentId::new("g1"), t(10), &mut audit).unwrap();
        assert!(matches!(
            graph.revoke(&ConsentId::new("g1"), t(20), &mut audit),
            Err(GraphError::AlreadyRevoked(_))
        ));
    }

    #[test]
    fn expired_grant_contributes_nothing() {
        let mut graph = graph();
        let mut audit = AuditChain::in_memory();
        let consent = consent_from_template("g1", "m", Role::FamilyMonitor, t(0), t(100));
        graph.grant(consent, &mut audit, t(0)).unwrap();
        let perm =
            graph.resolve_permissions(&schema(), &ActorId::new("m"), &ActorId::new("s"), t(100));
        assert!(perm.is_empty());
    }

    #[test]
    fn overlapping_grants_take_maximum_level_brute_force() {
        let hr = FieldPath::new("VitalSign", "heart_rate");
        let levels = [
            AccessLevel::StatusFlag,
            AccessLevel::Aggregate,
            AccessLevel::Full,
        ];
        for a in levels {
            for b in levels {
                let mut graph = graph();
                let mut audit = AuditChain::in_memory();
                for (i, level) in [a, b].into_iter().enumerate() {
                    let consent = ConsentRecord {
                        id: ConsentId::new(format!("g{i}")),
                        grantor: ActorId::new("s"),
                        grantee: ActorId::new("m"),
                        fields: [hr.clone()].into_iter().collect(),
                        access_level: level,
                        valid_from: t(0),
                        valid_until: t(1_000_000),
                        revoked_at: None,
                        purpose: "overlap".to_string(),
                    };
                    graph.grant(consent, &mut audit, t(0)).unwrap();
                }
                let perm = graph.resolve_permissions(
                    &schema(),
                    &ActorId::new("m"),
                    &ActorId::new("s"),
                    t(10),
                );
                assert_eq!(perm.level(&hr), a.max(b), "levels {a} + {b}");
            }
        }
    }

    #[test]
    fn subject_self_resolution_is_total() {
        let graph = graph();
        let schema = schema();
        let s = ActorId::new("s");
        let perm = graph.resolve_permissions(&schema, &s, &s, t(0));
        let expected: BTreeSet<FieldPath> = schema.data_field_paths().into_iter().collect();
        assert_eq!(perm.field_set(), expected);
        assert!(perm.fields.values().all(|l| *l == AccessLevel::Full));
    }

    #[test]
    fn apply_acls_intersects_and_never_exceeds() {
        let mut graph = graph();
        let mut audit = AuditChain::in_memory();
        let consent = consent_from_template("g1", "n", Role::NudgeOnly, t(0), t(1_000_000));
        graph.grant(consent, &mut audit, t(0)).unwrap();
        let schema = schema();
        let n = ActorId::new("n");
        let s = ActorId::new("s");

        // Nudge actor requesting everything gets exactly the 3 nudge fields.
        let allowed = graph.apply_acls(&schema, &n, &s, &FieldRequest::All, t(10));
        assert_eq!(allowed.fields.len(), 3);

        // A request entirely outside the grants yields the empty set.
        let disjoint: BTreeSet<FieldPath> =
            [FieldPath::new("Medication", "dose")].into_iter().collect();
        let allowed = graph.apply_acls(&schema, &n, &s, &FieldRequest::Fields(disjoint), t(10));
        assert!(allowed.is_empty());

        // The subject requesting its own fields sees the request unchanged.
        let own: BTreeSet<FieldPath> = [
            FieldPath::new("VitalSign", "heart_rate"),
            FieldPath::new("Medication", "dose"),
        ]
        .into_iter()
        .collect();
        let allowed = graph.apply_acls(&schema, &s, &s, &FieldRequest::Fields(own.clone()), t(10));
        assert_eq!(allowed.field_set(), own);
    }

    #[test]
    fn circle_invariants_enforced() {
        let mut graph = CareGraph::new();
        graph.add_actor(ActorId::new("a"), "A");
        graph.add_actor(ActorId::new("b"), "B");

        let too_small = CareCircle {
            id: CircleId::new("c"),
            subject: ActorId::new("a"),
            members: vec![(ActorId::new("a"), Role::Subject)],
        };
        assert!(matches!(
            graph.add_circle(too_small),
            Err(GraphError::CircleTooSmall { .. })
        ));

        let no_subject_member = CareCircle {
            id: CircleId::new("c"),
            subject: ActorId::new("a"),
            members: vec![
                (ActorId::new("a"), Role::CarePrimary),
                (ActorId::new("b"), Role::NudgeOnly),
            ],
        };
        assert!(matches!(
            graph.add_circle(no_subject_member),
            Err(GraphError::SubjectMemberInvalid { .. })
        ));

        let unknown_member = CareCircle {
            id: CircleId::new("c"),
            subject: ActorId::new("a"),
            members: vec![
                (ActorId::new("a"), Role::Subject),
                (ActorId::new("ghost"), Role::NudgeOnly),
            ],
        };
        assert!(matches!(
            graph.add_circle(unknown_member),
            Err(GraphError::UnregisteredMember { .. })
        ));
    }
}
