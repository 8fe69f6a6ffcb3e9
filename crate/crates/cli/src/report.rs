//! Row-per-measurement CSV and summary JSON.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    B(bool),
    S(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}
impl From<i32> for Cell {
    fn from(v: i32) -> Self {
        Cell::I(v.into())
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::I(v as i64)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::B(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.to_string())
    }
}

/// 12 significant digits.
pub fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else {
        v.to_string()
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(v) => fmt_float(*v),
            Cell::I(v) => v.to_string(),
            Cell::B(v) => v.to_string(),
            Cell::S(v) => v.clone(),
        }
    }
}

/// How a check compares `value` with `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `|value - target| <= tolerance`.
    Within,
    /// `value <= target + tolerance`.
    AtMost,
    /// `value >= target - tolerance`.
    AtLeast,
}

/// A declared check; `pass` follows from the other fields alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, value: f64, target: f64, tolerance: f64, comparison: Comparison) -> Self {
        let pass = match comparison {
            Comparison::Within => (value - target).abs() <= tolerance,
            Comparison::AtMost => value <= target + tolerance,
            Comparison::AtLeast => value >= target - tolerance,
        };
        Self { name: name.to_string(), value, target, tolerance, comparison, pass }
    }

    /// A boolean invariant as a check on `0/1`.
    pub fn flag(name: &str, ok: bool) -> Self {
        Self::new(name, if ok { 1.0 } else { 0.0 }, 1.0, 0.0, Comparison::AtLeast)
    }
}

/// Output of one experiment.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub checks: Vec<Check>,
    /// Extra measured quantities for the summary.
    pub extra: serde_json::Map<String, Value>,
}

impl Report {
    pub fn new(columns: &[&'static str]) -> Self {
        Self { columns: columns.to_vec(), ..Default::default() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.extra.insert(key.to_string(), serde_json::to_value(value).expect("serializable"));
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn write_csv(&self, path: &Path, experiment: &str, hash: &str, seed: u64) -> Result<(), CliError> {
        let mut out = format!(
            "# foldlab report schema v{SCHEMA_VERSION}; experiment={experiment}; columns=experiment,config_hash,seed,{}\n",
            self.columns.join(",")
        );
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["experiment", "config_hash", "seed"];
        header.extend(&self.columns);
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![experiment.to_string(), hash.to_string(), seed.to_string()];
            rec.extend(row.iter().map(Cell::render));
            w.write_record(&rec)?;
        }
        let body = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        out.push_str(&String::from_utf8(body).expect("csv output is utf-8"));
        fs::write(path, out)?;
        Ok(())
    }

    pub fn summary(&self, experiment: &str, hash: &str, seed: u64, wall_s: f64) -> Value {
        serde_json::json!({
            "experiment": experiment,
            "config_hash": hash,
            "seed": seed,
            "results": self.checks,
            "measured": self.extra,
            "pass": self.pass(),
            "wall_time_s": wall_s,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_float(1.0 / 3.0), "3.33333333333e-1");
        assert_eq!(fmt_float(-2.0), "-2.00000000000e0");
    }

    #[test]
    fn check_pass_is_rederivable() {
        assert!(Check::new("s", -0.34, -1.0 / 3.0, 0.05, Comparison::Within).pass);
        assert!(!Check::new("s", -0.2, -1.0 / 3.0, 0.05, Comparison::Within).pass);
        assert!(Check::new("a", 9.0, 10.0, 0.0, Comparison::AtMost).pass);
        assert!(!Check::flag("f", false).pass);
    }
}
