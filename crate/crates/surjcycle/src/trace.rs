//! Per-iteration training traces, serializable to CSV.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub const CSV_SCHEMA_TAG: &str = "# surjcycle-v1";

/// Column-oriented trace: a fixed header plus one row per checkpoint.
#[derive(Clone, Debug, Default)]
pub struct TrainingTrace {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrainingTrace {
    pub fn new(columns: &[&str]) -> Self {
        TrainingTrace {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "trace row width mismatch");
        self.rows.push(row);
    }

    pub fn last(&self, column: &str) -> Option<f64> {
        let idx = self.columns.iter().position(|c| c == column)?;
        self.rows.last().map(|r| r[idx])
    }

    pub fn column(&self, column: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == column)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    /// Deterministic CSV encoding: schema tag, header, then rows with
    /// full-precision floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(CSV_SCHEMA_TAG);
        out.push('\n');
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

pub fn format_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        // shortest round-trip representation
        format!("{v}")
    }
}
