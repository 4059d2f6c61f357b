//! Run reports and their persistence.

use std::fs;
use std::path::Path;

use blowup_core::{LabError, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    /// Human-readable acceptance rule, e.g. "<= 1e-6".
    pub tolerance: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, measured: f64, tolerance: &str) -> Self {
        Check {
            name: name.into(),
            pass,
            measured,
            tolerance: tolerance.into(),
            detail: String::new(),
        }
    }

    pub fn at_most(name: &str, measured: f64, limit: f64) -> Self {
        Check::new(name, measured <= limit, measured, &format!("<= {limit:e}"))
    }

    pub fn at_least(name: &str, measured: f64, limit: f64) -> Self {
        Check::new(name, measured >= limit, measured, &format!(">= {limit}"))
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    ChecksFailed,
    ConfigError,
    NumericError,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::ChecksFailed => 1,
            Status::ConfigError => 2,
            Status::NumericError => 3,
        }
    }

    pub fn from_error(e: &LabError) -> Self {
        match e {
            LabError::InvalidArgument(_) => Status::ConfigError,
            _ => Status::NumericError,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub status: Status,
    pub checks: Vec<Check>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Files written next to report.json.
    pub artifacts: Vec<String>,
    pub wall_clock_s: f64,
    /// Experiment-specific measurements.
    #[serde(default)]
    pub details: serde_json::Value,
    #[serde(skip)]
    pub files: Vec<(String, Vec<u8>)>,
}

impl RunReport {
    pub fn new(config: RunConfig) -> Self {
        RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            config,
            status: Status::Pass,
            checks: Vec::new(),
            error: None,
            artifacts: Vec::new(),
            wall_clock_s: 0.0,
            details: serde_json::Value::Null,
            files: Vec::new(),
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Status from the checks, unless an error already decided it.
    pub fn settle(&mut self) {
        if self.error.is_none() {
            self.status = if self.checks.iter().all(|c| c.pass) {
                Status::Pass
            } else {
                Status::ChecksFailed
            };
        }
    }

    pub fn fail_with(&mut self, e: &LabError) {
        self.status = Status::from_error(e);
        self.error = Some(e.to_string());
    }

    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {}: {:e} ({})\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.tolerance
            ));
        }
        if let Some(e) = &self.error {
            out.push_str(&format!("ERROR {e}\n"));
        }
        out.push_str(&format!("status: {:?}\n", self.status));
        out
    }
}

/// Write the collected traces and report.json into `dir`.
pub fn emit_report(report: &mut RunReport, dir: &Path) -> Result<()> {
    let io = |e: std::io::Error| LabError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    report.artifacts.clear();
    for (name, bytes) in &report.files {
        fs::write(dir.join(name), bytes).map_err(io)?;
        report.artifacts.push(name.clone());
    }
    report.artifacts.push("report.json".into());
    let json = serde_json::to_string_pretty(report).map_err(|e| LabError::Io(e.to_string()))?;
    fs::write(dir.join("report.json"), json).map_err(io)
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| LabError::InvalidArgument(format!("report: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emit_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = RunReport::new(RunConfig::default());
        r.checks.push(Check::at_most("x", 1.0, 2.0));
        r.checks.push(Check::at_least("y", 1.0, 2.0));
        r.files.push(("a.csv".into(), b"s\n1\n".to_vec()));
        r.settle();
        assert_eq!(r.status, Status::ChecksFailed);
        emit_report(&mut r, dir.path()).unwrap();
        assert_eq!(r.artifacts, vec!["a.csv", "report.json"]);
        let back = read_report(&dir.path().join("report.json")).unwrap();
        assert_eq!(back.checks, r.checks);
        assert_eq!(back.exit_code(), 1);
        assert!(back.files.is_empty());
    }

    #[test]
    fn error_status_wins_over_checks() {
        let mut r = RunReport::new(RunConfig::default());
        r.fail_with(&LabError::InvalidArgument("p".into()));
        r.settle();
        assert_eq!(r.exit_code(), 2);
        r.fail_with(&LabError::Divergence { s: 1.0, norm: 1e7 });
        assert_eq!(r.exit_code(), 3);
    }
}
