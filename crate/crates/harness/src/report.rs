//! Machine-readable verification report (`report.json`, `report.csv`).

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub check_id: String,
    pub anchor: String,
    pub pass: bool,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub statistics: BTreeMap<String, f64>,
    /// Wall time; `null` unless timings were requested, so that reruns stay
    /// byte-identical.
    pub runtime_ms: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub seed: u64,
    pub precision: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema_version: u32,
    pub overall_pass: bool,
    pub environment: Environment,
    pub checks: Vec<CheckEntry>,
}

impl VerificationReport {
    pub fn new(seed: u64, checks: Vec<CheckEntry>) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            overall_pass: checks.iter().all(|c| c.pass),
            environment: Environment {
                seed,
                precision: "f64".into(),
                version: env!("CARGO_PKG_VERSION").into(),
            },
            checks,
        }
    }

    pub fn entry(&self, id: &str) -> Option<&CheckEntry> {
        self.checks.iter().find(|c| c.check_id == id)
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)
    }

    /// `check_id,pass,lhs,rhs,runtime_ms,error`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["check_id", "pass", "lhs", "rhs", "runtime_ms", "error"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.checks {
            out.write_record([
                c.check_id.clone(),
                c.pass.to_string(),
                opt(c.lhs),
                opt(c.rhs),
                opt(c.runtime_ms),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
