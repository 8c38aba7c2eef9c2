//! Study reports: a JSON document, a CSV mirror of its checks and a
//! plot-ready TSV series.

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};
use std::path::{Path, PathBuf};

pub const SCHEMA: &str = "fcalc-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Comparison {
    AtMost,
    AtLeast,
    Within,
}

/// One pass/fail criterion. Hard checks guard invariants that must hold to
/// rounding; soft ones compare a measurement against a tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub comparison: Comparison,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    pub passed: bool,
    pub hard: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            comparison: Comparison::AtMost,
            threshold,
            target: None,
            passed: value <= threshold,
            hard: false,
        }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            comparison: Comparison::AtLeast,
            threshold,
            target: None,
            passed: value >= threshold,
            hard: false,
        }
    }

    /// `|value − target| ≤ tol`.
    pub fn within(name: &str, value: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            comparison: Comparison::Within,
            threshold: tol,
            target: Some(target),
            passed: (value - target).abs() <= tol,
            hard: false,
        }
    }

    pub fn hard(mut self) -> Self {
        self.hard = true;
        self
    }
}

/// A point of a plot series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub hbar: f64,
    pub quantity: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub study: String,
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub data: Map<String, Value>,
    pub series: Vec<SeriesPoint>,
    pub failures: Vec<String>,
}

impl Report {
    pub fn new(study: &str, scenario: &str, scenario_hash: &str, seed: u64) -> Self {
        Self {
            schema: SCHEMA,
            study: study.into(),
            scenario: scenario.into(),
            scenario_hash: scenario_hash.into(),
            seed,
            checks: Vec::new(),
            data: Map::new(),
            series: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn put<T: Serialize>(&mut self, key: &str, value: T) {
        let v = serde_json::to_value(value).expect("report data serialises");
        self.data.insert(key.into(), v);
    }

    pub fn point(&mut self, hbar: f64, quantity: &str, value: f64) {
        self.series.push(SeriesPoint { hbar, quantity: quantity.into(), value });
    }

    pub fn fail(&mut self, msg: impl Into<String>) {
        self.failures.push(msg.into());
    }

    pub fn find(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// 0 when everything passed, 2 for a failed soft check, 1 for an error
    /// or a failed hard check.
    pub fn exit_code(&self) -> i32 {
        if !self.failures.is_empty() || self.checks.iter().any(|c| c.hard && !c.passed) {
            1
        } else if self.checks.iter().any(|c| !c.passed) {
            2
        } else {
            0
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    /// Writes `<study>.json`, `<study>.csv` and `<study>.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let json = dir.join(format!("{}.json", self.study));
        std::fs::write(&json, self.to_json()).with_context(|| format!("writing {}", json.display()))?;

        let csv_path = dir.join(format!("{}.csv", self.study));
        let mut w = csv::Writer::from_path(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
        w.write_record(["check", "value", "comparison", "threshold", "target", "passed", "severity"])?;
        for c in &self.checks {
            let cmp = match c.comparison {
                Comparison::AtMost => "at-most",
                Comparison::AtLeast => "at-least",
                Comparison::Within => "within",
            };
            w.write_record([
                c.name.clone(),
                c.value.to_string(),
                cmp.to_string(),
                c.threshold.to_string(),
                c.target.map(|t| t.to_string()).unwrap_or_default(),
                c.passed.to_string(),
                if c.hard { "hard" } else { "soft" }.to_string(),
            ])?;
        }
        w.flush()?;

        let tsv_path = dir.join(format!("{}.tsv", self.study));
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .from_path(&tsv_path)
            .with_context(|| format!("writing {}", tsv_path.display()))?;
        w.write_record(["hbar", "quantity", "value"])?;
        for p in &self.series {
            w.write_record([p.hbar.to_string(), p.quantity.clone(), p.value.to_string()])?;
        }
        w.flush()?;
        Ok(vec![json, csv_path, tsv_path])
    }
}

/// Combined exit code of several reports.
pub fn combined_exit_code(reports: &[Report]) -> i32 {
    let codes: Vec<i32> = reports.iter().map(Report::exit_code).collect();
    if codes.contains(&1) {
        1
    } else if codes.contains(&2) {
        2
    } else {
        0
    }
}
