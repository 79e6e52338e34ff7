use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Outcome of an inequality check `lhs ≤ rhs` (with the tolerance already
/// folded into `bound_holds`), plus named auxiliary measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub bound_holds: bool,
    pub lhs: f64,
    pub rhs: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

impl CheckReport {
    pub fn new(bound_holds: bool, lhs: f64, rhs: f64) -> Self {
        Self {
            bound_holds,
            lhs,
            rhs,
            details: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }
}
