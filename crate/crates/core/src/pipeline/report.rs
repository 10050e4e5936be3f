use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::missing_features::ScoreTable;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub visit: usize,
    pub arm: String,
    pub value: f64,
    /// Instances averaged into `value`.
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visit: Option<usize>,
    /// `None` when undefined, e.g. an AUC on single-class labels.
    pub value: Option<f64>,
}

impl Metric {
    pub fn new(name: impl Into<String>, visit: Option<usize>, value: Option<f64>) -> Self {
        Self {
            name: name.into(),
            visit,
            value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: u8,
    pub seed: u64,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScoreTable>,
    pub metrics: Vec<Metric>,
    pub series: Vec<SeriesPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub const REPORT_FILE: &str = "report.json";
pub const SERIES_FILE: &str = "series.csv";
pub const SCORES_FILE: &str = "scores.csv";

impl ExperimentReport {
    pub fn metric(&self, name: &str, visit: Option<usize>) -> Option<f64> {
        self.metrics
            .iter()
            .find(|m| m.name == name && m.visit == visit)
            .and_then(|m| m.value)
    }

    pub fn series_value(&self, arm: &str, visit: usize) -> Option<f64> {
        self.series
            .iter()
            .find(|p| p.arm == arm && p.visit == visit)
            .map(|p| p.value)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes the report, its series and (for the imputation experiment) the
    /// score table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(REPORT_FILE);
        std::fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))?;
        emit_series(self, &dir.join(SERIES_FILE))?;
        if let Some(scores) = &self.scores {
            scores.write_csv(&dir.join(SCORES_FILE))?;
        }
        Ok(())
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes `visit,arm,value` rows in report order.
pub fn emit_series(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["visit", "arm", "value"]).map_err(|e| csv_error(path, e))?;
    for p in &report.series {
        w.write_record([p.visit.to_string(), p.arm.clone(), p.value.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_series(path: &Path) -> Result<Vec<(usize, String, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |what: &str| Error::Csv {
            path: path.to_path_buf(),
            message: format!("bad {what} in series row {rec:?}"),
        };
        let visit = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("visit"))?;
        let arm = rec.get(1).ok_or_else(|| bad("arm"))?.to_string();
        let value = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad("value"))?;
        out.push((visit, arm, value));
    }
    Ok(out)
}
