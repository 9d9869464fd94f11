//! Validation of untyped key-value records against the schema.

use serde_json::Value;

use super::{FieldKind, FieldValue, OntologyError, OntologySchema, TypedEvent};
use crate::time::Timestamp;

/// Types a raw record against `entity`'s definition.
///
/// Every required field must be present, kinds must match, and unknown
/// fields are rejected outright so downstream ACL filtering can never be
/// bypassed by unmapped data. Quantity values are tagged with the field's
/// canonical unit.
pub fn validate_event(
    schema: &OntologySchema,
    raw: &serde_json::Map<String, Value>,
    entity: &str,
) -> Result<TypedEvent, OntologyError> {
    let def = schema
        .entity(entity)
        .ok_or_else(|| OntologyError::UnknownEntity(entity.to_string()))?;

    let mut fields = std::collections::BTreeMap::new();
    for (name, value) in raw {
        let field = def.field(name).ok_or_else(|| OntologyError::UnknownField {
            entity: entity.to_string(),
            field: name.clone(),
        })?;
        fields.insert(name.clone(), coerce(entity, field.name.as_str(), field.kind, field.unit.as_deref(), value)?);
    }

    let missing: Vec<String> = def
        .fields
        .iter()
        .filter(|f| f.required && !fields.contains_key(&f.name))
        .map(|f| f.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(OntologyError::MissingFields {
            entity: entity.to_string(),
            fields: missing,
        });
    }

    Ok(TypedEvent {
        entity: entity.to_string(),
        version: schema.version,
        fields,
    })
}

fn coerce(
    entity: &str,
    field: &str,
    kind: FieldKind,
    unit: Option<&str>,
    value: &Value,
) -> Result<FieldValue, OntologyError> {
    let mismatch = |got: &Value| OntologyError::KindMismatch {
        entity: entity.to_string(),
        field: field.to_string(),
        expected: kind,
        got: type_name(got).to_string(),
    };
    match kind {
        FieldKind::Quantity => match value.as_f64() {
            Some(v) if v.is_finite() => Ok(FieldValue::Quantity {
                value: v,
                unit: unit.unwrap_or_default().to_string(),
            }),
            _ => Err(mismatch(value)),
        },
        FieldKind::Code => match value.as_str() {
            Some(s) => Ok(FieldValue::Code(s.to_string())),
            None => Err(mismatch(value)),
        },
        FieldKind::Text => match value.as_str() {
            Some(s) => Ok(FieldValue::Text(s.to_string())),
            None => Err(mismatch(value)),
        },
        FieldKind::Timestamp => match value {
            Value::String(s) => Timestamp::parse_rfc3339(s)
                .map(FieldValue::Timestamp)
                .map_err(|_| mismatch(value)),
            Value::Number(n) => n
                .as_i64()
                .map(|ms| FieldValue::Timestamp(Timestamp::from_millis(ms)))
                .ok_or_else(|| mismatch(value)),
            _ => Err(mismatch(value)),
        },
        FieldKind::Boolean => match value.as_bool() {
            Some(b) => Ok(FieldValue::Boolean(b)),
            None => Err(mismatch(value)),
        },
    }
}

fn type_name(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}
