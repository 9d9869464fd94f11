//! Role consent templates: the canonical per-role field lists and access
//! levels, shipped as `roles.json`.
//!
//! A role template drives both the consent a subject grants to an actor of
//! that role and the field lines rendered in the actor's briefing, so the
//! expected-versus-exposed accounting has a single source of truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Role;
use crate::ontology::FieldPath;
use crate::caregraph::AccessLevel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleTemplate {
    pub access_level: AccessLevel,
    pub valid_days: u32,
    pub fields: Vec<FieldPath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleTemplates {
    pub version: u32,
    pub templates: BTreeMap<Role, RoleTemplate>,
}

impl RoleTemplates {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    /// The templates shipped in `assets/roles.json`.
    pub fn builtin() -> Self {
        Self::from_json(crate::defaults::ROLES_JSON).expect("built-in roles.json parses")
    }

    pub fn template(&self, role: Role) -> Option<&RoleTemplate> {
        self.templates.get(&role)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("role templates serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_covers_every_role() {
        let templates = RoleTemplates::builtin();
        for role in Role::ALL {
            assert!(templates.template(role).is_some(), "missing {role}");
        }
    }

    #[test]
    fn canonical_field_counts_match_role_contract() {
        let templates = RoleTemplates::builtin();
        assert_eq!(templates.template(Role::CarePrimary).unwrap().fields.len(), 15);
        assert_eq!(templates.template(Role::FamilyMonitor).unwrap().fields.len(), 7);
        assert_eq!(templates.template(Role::NudgeOnly).unwrap().fields.len(), 3);
    }

    #[test]
    fn template_fields_exist_in_builtin_ontology() {
        let templates = RoleTemplates::builtin();
        let schema = crate::ontology::OntologySchema::builtin();
        for (role, template) in &templates.templates {
            for path in &template.fields {
                assert!(
                    schema.field_def(path).is_some(),
                    "{role}: {path} not in ontology"
                );
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let templates = RoleTemplates::builtin();
        let json = templates.to_json();
        assert_eq!(RoleTemplates::from_json(&json).unwrap(), templates);
    }
}
