use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Mode, ScenarioConfig};
use crate::error::Result;
use crate::seeding::SEED_RULE;

/// One table cell. Floats are written with the shortest round-trip form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => write!(f, "{v}"),
            Cell::Text(v) => f.write_str(v),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }
}

/// A pass/fail comparison carried by a record. Failing checks make the CLI
/// exit with status 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: String,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, target: impl Into<String>, passed: bool) -> Self {
        Self {
            name: name.into(),
            value,
            target: target.into(),
            passed,
        }
    }
}

/// Secondary table saved as `<stem>.<suffix>.csv` next to the main CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub suffix: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Attachment {
    pub fn new(suffix: &str, columns: &[&str]) -> Self {
        Self {
            suffix: suffix.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::to_string))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub mode: Mode,
    pub version: String,
    pub seed: u64,
    pub seed_rule: String,
    pub config: ScenarioConfig,
    pub elapsed_seconds: f64,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub checks: Vec<Check>,
    pub notices: Vec<String>,
    /// Not part of the JSON sidecar.
    #[serde(skip)]
    pub attachments: Vec<Attachment>,
}

impl ResultRecord {
    pub fn new(config: &ScenarioConfig, mode: Mode, columns: &[&str]) -> Self {
        Self {
            mode,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            seed_rule: SEED_RULE.to_string(),
            config: config.clone(),
            elapsed_seconds: 0.0,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            checks: Vec::new(),
            notices: Vec::new(),
            attachments: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of a numeric column, `NaN` for text cells.
    pub fn column_values(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column(name)?;
        Some(self.rows.iter().map(|r| r[k].as_f64().unwrap_or(f64::NAN)).collect())
    }

    /// `#`-prefixed header lines (mode, version, seed, seed rule) followed by
    /// the column row and one row per scan point.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writeln!(writer, "# gravlab {} mode={}", self.version, self.mode)?;
        writeln!(writer, "# seed={}", self.seed)?;
        writeln!(writer, "# seed_rule: {}", self.seed_rule)?;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::to_string))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Writes the CSV to `path`, the JSON sidecar and any attachments next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))?;
        std::fs::write(sidecar_path(path), self.to_json()?)?;
        for a in &self.attachments {
            let file = std::fs::File::create(attachment_path(path, &a.suffix))?;
            a.write_csv(std::io::BufWriter::new(file))?;
        }
        Ok(())
    }
}

/// `out.csv` → `out.json`; `out.json` → `out.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json") {
        path.with_extension("meta.json")
    } else {
        path.with_extension("json")
    }
}

/// `out.csv` → `out.<suffix>.csv`.
pub fn attachment_path(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(format!("{suffix}.csv"))
}
