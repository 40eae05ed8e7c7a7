use std::collections::BTreeMap;

use serde::Serialize;

/// A rectangular table of numbers with named columns.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

/// Empirical constants gathered by a sampling probe, with the evidence
/// that failed.
///
/// `worst_slack` is the smallest margin seen across all checked
/// inequalities; a check with negative slack is a violation. Non-finite
/// numbers serialize as `null`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub probe: String,
    pub constants: BTreeMap<String, f64>,
    pub tables: BTreeMap<String, Table>,
    pub samples: usize,
    pub worst_slack: f64,
    pub violations: Vec<String>,
}

impl ProbeReport {
    pub fn new(probe: impl Into<String>) -> Self {
        Self {
            probe: probe.into(),
            constants: BTreeMap::new(),
            tables: BTreeMap::new(),
            samples: 0,
            worst_slack: f64::INFINITY,
            violations: Vec::new(),
        }
    }

    /// Records an inequality with margin `slack`; a negative or NaN slack
    /// becomes a violation described by `what`.
    pub fn check(&mut self, slack: f64, what: impl FnOnce() -> String) {
        let slack = if slack.is_nan() { f64::NEG_INFINITY } else { slack };
        if slack < self.worst_slack {
            self.worst_slack = slack;
        }
        if slack < 0.0 {
            self.violations.push(what());
        }
    }

    pub fn set(&mut self, key: impl Into<String>, value: f64) {
        self.constants.insert(key.into(), value);
    }

    pub fn constant(&self, key: &str) -> Option<f64> {
        self.constants.get(key).copied()
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slack_and_violations_agree() {
        let mut r = ProbeReport::new("demo");
        r.check(0.5, || "fine".into());
        assert!(r.passed());
        r.check(-1e-3, || "broken".into());
        assert!(!r.passed());
        assert_eq!(r.worst_slack, -1e-3);
        r.check(f64::NAN, || "nan".into());
        assert_eq!(r.violations.len(), 2);
    }

    #[test]
    fn infinite_slack_serializes_as_null() {
        let r = ProbeReport::new("empty");
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert!(v["worst_slack"].is_null());
    }
}
