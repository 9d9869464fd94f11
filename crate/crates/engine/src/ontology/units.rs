//! Unit conversion to the canonical units fixed by the ontology.
//!
//! Conversions are registered per `(source unit, canonical unit)` pair.
//! A missing pair is an error at the capture pipeline, never a silent
//! pass-through.

use std::collections::BTreeMap;

/// Multiplicative conversion table keyed by `(from, to)` unit strings.
#[derive(Debug, Clone)]
pub struct UnitTable {
    factors: BTreeMap<(String, String), f64>,
}

impl UnitTable {
    pub fn empty() -> Self {
        UnitTable {
            factors: BTreeMap::new(),
        }
    }

    pub fn with_defaults() -> Self {
        let mut table = Self::empty();
        // Aliases.
        table.register("beats/min", "bpm", 1.0);
        table.register("count/hour", "steps/hour", 1.0);
        // Rescales.
        table.register("steps/min", "steps/hour", 60.0);
        table.register("steps/sec", "steps/hour", 3600.0);
        table.register("seconds", "minutes", 1.0 / 60.0);
        table.register("hours", "minutes", 60.0);
        table.register("fraction", "%", 100.0);
        table.register("kPa", "mmHg", 7.500_615);
        table
    }

    pub fn register(&mut self, from: &str, to: &str, factor: f64) {
        self.factors
            .insert((from.to_string(), to.to_string()), factor);
    }

    /// Converts `value` from `from` to `to`. Identity when the units are
    /// equal; `None` when no conversion is registered.
    pub fn convert(&self, value: f64, from: &str, to: &str) -> Option<f64> {
        if from == to {
            return Some(value);
        }
        self.factors
            .get(&(from.to_string(), to.to_string()))
            .map(|factor| value * factor)
    }
}

impl Default for UnitTable {
    fn default() -> Self {
        Self::with_defaults()
    }
}
