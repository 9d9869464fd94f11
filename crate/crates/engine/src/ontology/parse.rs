//! Line-oriented ontology file parser and serializer.
//!
//! Grammar, one declaration per line, `#` starts a comment:
//!
//! ```text
//! version N
//! entity Name
//!   field name: kind [unit=U] [required]
//!   relation name -> Entity
//! ```

use std::collections::BTreeSet;

use super::{EntityDef, FieldDef, FieldKind, OntologyError, OntologySchema, RelationDef};

pub fn parse_ontology(text: &str) -> Result<OntologySchema, OntologyError> {
    let mut version: Option<u32> = None;
    let mut entities: Vec<EntityDef> = Vec::new();
    // (line, relation name, target) checked once all entities are known.
    let mut pending_relations: Vec<(usize, String, String)> = Vec::new();
    let mut entity_start_line = 0usize;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }

        let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        match keyword {
            "version" => {
                let v: u32 = rest.parse().map_err(|_| OntologyError::Syntax {
                    line: line_no,
                    message: format!("invalid version `{rest}`"),
                })?;
                if v < 1 {
                    return Err(OntologyError::Syntax {
                        line: line_no,
                        message: "version must be >= 1".to_string(),
                    });
                }
                version = Some(v);
            }
            "entity" => {
                finish_entity(&entities, entity_start_line)?;
                let name = parse_identifier(rest, line_no, "entity name")?;
                if entities.iter().any(|e| e.name == name) {
                    return Err(OntologyError::DuplicateEntity {
                        line: line_no,
                        name,
                    });
                }
                entity_start_line = line_no;
                entities.push(EntityDef {
                    name,
                    fields: Vec::new(),
                    relations: Vec::new(),
                });
            }
            "field" => {
                let entity = entities.last_mut().ok_or_else(|| OntologyError::Syntax {
                    line: line_no,
                    message: "`field` outside an entity block".to_string(),
                })?;
                let field = parse_field(rest, line_no)?;
                if entity.fields.iter().any(|f| f.name == field.name) {
                    return Err(OntologyError::DuplicateField {
                        line: line_no,
                        entity: entity.name.clone(),
                        field: field.name,
                    });
                }
                entity.fields.push(field);
            }
            "relation" => {
                let entity = entities.last_mut().ok_or_else(|| OntologyError::Syntax {
                    line: line_no,
                    message: "`relation` outside an entity block".to_string(),
                })?;
                let (name, target) =
                    rest.split_once("->")
                        .ok_or_else(|| OntologyError::Syntax {
                            line: line_no,
                            message: "expected `relation name -> Entity`".to_string(),
                        })?;
                let name = parse_identifier(name.trim(), line_no, "relation name")?;
                let target = parse_identifier(target.trim(), line_no, "relation target")?;
                if entity.relations.iter().any(|r| r.name == name) {
                    return Err(OntologyError::Syntax {
                        line: line_no,
                        message: format!("duplicate relation `{name}`"),
                    });
                }
                pending_relations.push((line_no, name.clone(), target.clone()));
                entity.relations.push(RelationDef { name, target });
            }
            other => {
                return Err(OntologyError::Syntax {
                    line: line_no,
                    message: format!("unknown keyword `{other}`"),
                });
            }
        }
    }

    finish_entity(&entities, entity_start_line)?;
    let version = version.ok_or(OntologyError::MissingVersion)?;

    let known: BTreeSet<&str> = entities.iter().map(|e| e.name.as_str()).collect();
    for (line, relation, target) in pending_relations {
        if !known.contains(target.as_str()) {
            return Err(OntologyError::UnknownRelationTarget {
                line,
                relation,
                target,
            });
        }
    }

    Ok(OntologySchema { version, entities })
}

/// Renders a schema back to the text grammar. `parse_ontology` of the output
/// reproduces the schema exactly.
pub fn serialize_ontology(schema: &OntologySchema) -> String {
    let mut out = String::new();
    out.push_str(&format!("version {}\n", schema.version));
    for entity in &schema.entities {
        out.push('\n');
        out.push_str(&format!("entity {}\n", entity.name));
        for field in &entity.fields {
            out.push_str(&format!("  field {}: {}", field.name, field.kind));
            if let Some(unit) = &field.unit {
                out.push_str(&format!(" unit={unit}"));
            }
            if field.required {
                out.push_str(" required");
            }
            out.push('\n');
        }
        for relation in &entity.relations {
            out.push_str(&format!("  relation {} -> {}\n", relation.name, relation.target));
        }
    }
    out
}

fn finish_entity(entities: &[EntityDef], start_line: usize) -> Result<(), OntologyError> {
    if let Some(last) = entities.last() {
        if last.fields.is_empty() {
            return Err(OntologyError::EmptyEntity {
                line: start_line,
                entity: last.name.clone(),
            });
        }
    }
    Ok(())
}

fn parse_identifier(s: &str, line: usize, what: &str) -> Result<String, OntologyError> {
    let ok = !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !s.chars().next().unwrap().is_ascii_digit();
    if ok {
        Ok(s.to_string())
    } else {
        Err(OntologyError::Syntax {
            line,
            message: format!("invalid {what} `{s}`"),
        })
    }
}

fn parse_field(rest: &str, line: usize) -> Result<FieldDef, OntologyError> {
    let (name, spec) = rest.split_once(':').ok_or_else(|| OntologyError::Syntax {
        line,
        message: "expected `field name: kind [unit=U] [required]`".to_string(),
    })?;
    let name = parse_identifier(name.trim(), line, "field name")?;

    let mut kind: Option<FieldKind> = None;
    let mut unit: Option<String> = None;
    let mut required = false;
    for (i, token) in spec.split_whitespace().enumerate() {
        if i == 0 {
            kind = Some(token.parse().map_err(|_| OntologyError::Syntax {
                line,
                message: format!("unknown field kind `{token}`"),
            })?);
        } else if let Some(u) = token.strip_prefix("unit=") {
            unit = Some(u.to_string());
        } else if token == "required" {
            required = true;
        } else {
            return Err(OntologyError::Syntax {
                line,
                message: format!("unexpected token `{token}`"),
            });
        }
    }
    let kind = kind.ok_or_else(|| OntologyError::Syntax {
        line,
        message: "missing field kind".to_string(),
    })?;

    match (kind, &unit) {
        (FieldKind::Quantity, None) => {
            return Err(OntologyError::Syntax {
                line,
                message: format!("quantity field `{name}` must declare unit=..."),
            })
        }
        (FieldKind::Quantity, Some(_)) => {}
        (_, Some(_)) => {
            return Err(OntologyError::Syntax {
                line,
                message: format!("non-quantity field `{name}` must not declare a unit"),
            })
        }
        _ => {}
    }

    Ok(FieldDef {
        name,
        kind,
        unit,
        required,
    })
}
