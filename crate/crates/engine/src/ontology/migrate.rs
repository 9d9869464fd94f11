//! Schema migrations applied to stored records on update.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FieldDef, FieldValue, OntologyError, TypedEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrationAction {
    AddField {
        entity: String,
        field: FieldDef,
        default: FieldValue,
    },
    RenameField {
        entity: String,
        from: String,
        to: String,
    },
    DropField {
        entity: String,
        field: String,
    },
    RetypeField {
        entity: String,
        field: String,
        converter: String,
    },
}

/// One single-increment migration, `from_version + 1 == to_version`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationStep {
    pub from_version: u32,
    pub to_version: u32,
    pub actions: Vec<MigrationAction>,
}

impl MigrationStep {
    pub fn new(from_version: u32, actions: Vec<MigrationAction>) -> Self {
        MigrationStep {
            from_version,
            to_version: from_version + 1,
            actions,
        }
    }
}

type Converter = fn(FieldValue) -> Result<FieldValue, String>;

/// Named value converters used by `retype_field` actions.
pub struct ConverterRegistry {
    converters: BTreeMap<String, Converter>,
}

impl ConverterRegistry {
    pub fn empty() -> Self {
        ConverterRegistry {
            converters: BTreeMap::new(),
        }
    }

    pub fn with_defaults() -> Self {
        let mut registry = Self::empty();
        registry.register("code_to_text", |v| match v {
            FieldValue::Code(c) => Ok(FieldValue::Text(c)),
            other => Err(format!("expected code, got {}", other.kind())),
        });
        registry.register("text_to_code", |v| match v {
            FieldValue::Text(t) => Ok(FieldValue::Code(t)),
            other => Err(format!("expected text, got {}", other.kind())),
        });
        registry.register("quantity_to_text", |v| match v {
            FieldValue::Quantity { value, unit } => Ok(FieldValue::Text(format!("{value} {unit}"))),
            other => Err(format!("expected quantity, got {}", other.kind())),
        });
        registry.register("boolean_to_code", |v| match v {
            FieldValue::Boolean(b) => Ok(FieldValue::Code(if b { "yes" } else { "no" }.into())),
            other => Err(format!("expected boolean, got {}", other.kind())),
        });
        registry
    }

    pub fn register(&mut self, id: &str, f: Converter) {
        self.converters.insert(id.to_string(), f);
    }

    fn get(&self, id: &str) -> Result<&Converter, OntologyError> {
        self.converters
            .get(id)
            .ok_or_else(|| OntologyError::UnknownConverter(id.to_string()))
    }
}

/// Migrates `record` along a contiguous step chain to `target`.
///
/// An empty chain (`record.version == target`) is the identity. Actions for
/// entities other than the record's are skipped.
pub fn migrate_entity(
    steps: &[MigrationStep],
    registry: &ConverterRegistry,
    mut record: TypedEvent,
    target: u32,
) -> Result<TypedEvent, OntologyError> {
    if record.version > target {
        return Err(OntologyError::UnreachableVersion {
            have: record.version,
            want: target,
        });
    }
    while record.version < target {
        let step = steps
            .iter()
            .find(|s| s.from_version == record.version)
            .ok_or(OntologyError::MissingStep(record.version))?;
        if step.to_version != step.from_version + 1 {
            return Err(OntologyError::NonContiguousStep {
                from: step.from_version,
                to: step.to_version,
            });
        }
        apply_step(step, registry, &mut record)?;
        record.version = step.to_version;
    }
    Ok(record)
}

fn apply_step(
    step: &MigrationStep,
    registry: &ConverterRegistry,
    record: &mut TypedEvent,
) -> Result<(), OntologyError> {
    for action in &step.actions {
        match action {
            MigrationAction::AddField {
                entity,
                field,
                default,
            } => {
                if *entity == record.entity && !record.fields.contains_key(&field.name) {
                    record.fields.insert(field.name.clone(), default.clone());
                }
            }
            MigrationAction::RenameField { entity, from, to } => {
                if *entity == record.entity {
                    if let Some(v) = record.fields.remove(from) {
                        record.fields.insert(to.clone(), v);
                    }
                }
            }
            MigrationAction::DropField { entity, field } => {
                if *entity == record.entity {
                    record.fields.remove(field);
                }
            }
            MigrationAction::RetypeField {
                entity,
                field,
                converter,
            } => {
                if *entity == record.entity {
                    if let Some(v) = record.fields.remove(field) {
                        let f = registry.get(converter)?;
                        let converted =
                            f(v).map_err(|message| OntologyError::ConverterFailed {
                                converter: converter.clone(),
                                field: field.clone(),
                                message,
                            })?;
                        record.fields.insert(field.clone(), converted);
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{parse_ontology, validate_event, FieldKind};
    use serde_json::json;

    fn v1_event() -> TypedEvent {
        let schema = crate::ontology::OntologySchema::builtin();
        let record = json!({"heart_rate": 72, "ts": "2025-03-01T08:00:00Z"});
        validate_event(&schema, record.as_object().unwrap(), "VitalSign").unwrap()
    }

    fn sleep_score_field() -> FieldDef {
        FieldDef {
            name: "sleep_score".to_string(),
            kind: FieldKind::Quantity,
            unit: Some("%".to_string()),
            required: false,
        }
    }

    #[test]
    fn empty_chain_is_identity() {
        let record = v1_event();
        let migrated =
            migrate_entity(&[], &ConverterRegistry::empty(), record.clone(), 1).unwrap();
        assert_eq!(migrated, record);
    }

    #[test]
    fn add_field_injects_default() {
        let step = MigrationStep::new(
            1,
            vec![MigrationAction::AddField {
                entity: "VitalSign".to_string(),
                field: sleep_score_field(),
                default: FieldValue::Quantity {
                    value: 0.0,
                    unit: "%".to_string(),
                },
            }],
        );
        let migrated =
            migrate_entity(&[step], &ConverterRegistry::empty(), v1_event(), 2).unwrap();
        assert_eq!(migrated.version, 2);
        assert_eq!(
            migrated.fields["sleep_score"],
            FieldValue::Quantity {
                value: 0.0,
                unit: "%".to_string()
            }
        );
    }

    #[test]
    fn rename_then_validate_against_v2_schema() {
        // v2 renames heart_rate -> hr.
        let v2_schema = parse_ontology(
            "version 2\nentity VitalSign\n  field ts: timestamp required\n  field hr: quantity unit=bpm\n",
        )
        .unwrap();
        let step = MigrationStep::new(
            1,
            vec![MigrationAction::RenameField {
                entity: "VitalSign".to_string(),
                from: "heart_rate".to_string(),
                to: "hr".to_string(),
            }],
        );
        let migrated =
            migrate_entity(&[step], &ConverterRegistry::empty(), v1_event(), 2).unwrap();

        // Round-trip through validation: the migrated record passes, the
        // unmigrated one does not.
        let as_raw = |event: &TypedEvent| {
            let mut map = serde_json::Map::new();
            for (name, value) in &event.fields {
                let v = match value {
                    FieldValue::Quantity { value, .. } => json!(value),
                    FieldValue::Timestamp(ts) => json!(ts.to_rfc3339()),
                    FieldValue::Code(c) => json!(c),
                    FieldValue::Text(t) => json!(t),
                    FieldValue::Boolean(b) => json!(b),
                };
                map.insert(name.clone(), v);
            }
            map
        };
        assert!(validate_event(&v2_schema, &as_raw(&migrated), "VitalSign").is_ok());
        assert!(validate_event(&v2_schema, &as_raw(&v1_event()), "VitalSign").is_err());
    }

    #[test]
    fn missing_step_in_chain_reported() {
        let err = migrate_entity(&[], &ConverterRegistry::empty(), v1_event(), 2).unwrap_err();
        assert_eq!(err, OntologyError::MissingStep(1));
    }

    #[test]
    fn converter_failure_surfaces() {
        let step = MigrationStep::new(
            1,
            vec![MigrationAction::RetypeField {
                entity: "VitalSign".to_string(),
                field: "heart_rate".to_string(),
                converter: "code_to_text".to_string(),
            }],
        );
        let err = migrate_entity(
            &[step],
            &ConverterRegistry::with_defaults(),
            v1_event(),
            2,
        )
        .unwrap_err();
        assert!(matches!(err, OntologyError::ConverterFailed { .. }));
    }

    #[test]
    fn chains_compose() {
        // migrate(1->2) then migrate(2->3) equals migrate(1->3).
        let steps = vec![
            MigrationStep::new(
                1,
                vec![MigrationAction::AddField {
                    entity: "VitalSign".to_string(),
                    field: sleep_score_field(),
                    default: FieldValue::Quantity {
                        value: 0.0,
                        unit: "%".to_string(),
                    },
                }],
            ),
            MigrationStep::new(
                2,
                vec![MigrationAction::RenameField {
                    entity: "VitalSign".to_string(),
                    from: "heart_rate".to_string(),
                    to: "hr".to_string(),
                }],
            ),
        ];
        let registry = ConverterRegistry::empty();
        for hr in [55.0, 72.0, 110.0, 180.0] {
            let mut record = v1_event();
            record.fields.insert(
                "heart_rate".to_string(),
                FieldValue::Quantity {
                    value: hr,
                    unit: "bpm".to_string(),
                },
            );
            let direct = migrate_entity(&steps, &registry, record.clone(), 3).unwrap();
            let mid = migrate_entity(&steps, &registry, record, 2).unwrap();
            let staged = migrate_entity(&steps, &registry, mid, 3).unwrap();
            assert_eq!(direct, staged);
        }
    }
}
