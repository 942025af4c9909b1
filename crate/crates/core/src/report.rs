//! Run reports: per-time CSV rows plus a JSON summary of checks and verdicts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// One pass/fail check recorded in a report summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub columns: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<Vec<f64>>,
    pub checks: Vec<Check>,
    /// Free-form scalar results, keyed by name (sorted on output).
    pub summary: Map<String, Value>,
}

impl RunReport {
    pub fn new(scenario: &str, columns: &[&str]) -> Self {
        Self {
            scenario: scenario.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Dimension(format!(
                "row has {} values for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("report column `{}`", self.columns[i])));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn record(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.into(), value.into());
    }

    pub fn check(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summary_json(&self) -> Value {
        serde_json::json!({
            "scenario": self.scenario,
            "rows": self.rows.len(),
            "columns": self.columns,
            "all_passed": self.all_passed(),
            "checks": self.checks,
            "summary": self.summary,
        })
    }
}

/// Real-number formatting with 17 significant digits (round-trips every f64).
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes to a sibling temp file and renames it into place, removing the temp
/// file on failure so no partial output survives.
fn write_atomically(path: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = temp_path(path);
    let result = fill(&tmp).and_then(|()| fs::rename(&tmp, path).map_err(io_err(path)));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Header row then one row per grid point; `\n` line endings.
pub fn write_csv(report: &RunReport, path: &Path) -> Result<()> {
    write_atomically(path, |tmp| {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(tmp)
            .map_err(csv_err)?;
        w.write_record(&report.columns).map_err(csv_err)?;
        for row in &report.rows {
            w.write_record(row.iter().map(|v| format_real(*v))).map_err(csv_err)?;
        }
        w.flush().map_err(io_err(path))
    })
}

pub fn write_summary(report: &RunReport, path: &Path) -> Result<()> {
    write_atomically(path, |tmp| {
        let mut text = serde_json::to_string_pretty(&report.summary_json())
            .map_err(|e| Error::Config(format!("cannot serialize summary: {e}")))?;
        text.push('\n');
        let mut f = fs::File::create(tmp).map_err(io_err(path))?;
        f.write_all(text.as_bytes()).map_err(io_err(path))
    })
}

/// Writes `<dir>/<scenario>.csv` and `<dir>/<scenario>_summary.json`, returning both paths.
pub fn write_outputs(report: &RunReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join(format!("{}.csv", report.scenario));
    let json_path = dir.join(format!("{}_summary.json", report.scenario));
    write_csv(report, &csv_path)?;
    if let Err(e) = write_summary(report, &json_path) {
        let _ = fs::remove_file(&csv_path);
        return Err(e);
    }
    Ok((csv_path, json_path))
}
