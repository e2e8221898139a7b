//! Report tables and their CSV and JSON encodings.
//!
//! Floats are written in shortest round-trip form so files are byte-stable.

use std::io::Write;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::RunConfig;
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) if x.is_nan() => String::new(),
            Cell::Num(x) => format!("{x:?}"),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(x) if !x.is_finite() => Value::Null,
            Cell::Num(x) => json!(x),
            Cell::Int(i) => json!(i),
            Cell::Text(s) => json!(s),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<u32> for Cell {
    fn from(x: u32) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

/// A named pass/fail verdict.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

/// Output of one subcommand.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub command: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    pub summary: Vec<(&'static str, Cell)>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new(command: &'static str, columns: &[&'static str]) -> Self {
        Self {
            command,
            columns: columns.to_vec(),
            rows: Vec::new(),
            summary: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    pub fn summary(&mut self, key: &'static str, value: impl Into<Cell>) {
        self.summary.push((key, value.into()));
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn write_csv<W: Write>(&self, cfg: &RunConfig, mut w: W) -> Result<(), CliError> {
        writeln!(w, "# gwer {VERSION}")?;
        writeln!(w, "# command={}", self.command)?;
        for (k, v) in cfg.echo() {
            writeln!(w, "# config {k}={v}")?;
        }
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        for (k, v) in &self.summary {
            writeln!(w, "# summary {k}={}", v.csv())?;
        }
        for c in &self.checks {
            let verdict = if c.pass { "PASS" } else { "FAIL" };
            writeln!(w, "# check {} {verdict} {}", c.name, c.detail)?;
        }
        Ok(())
    }

    pub fn to_json(&self, cfg: &RunConfig) -> Value {
        let config: Map<String, Value> = cfg
            .echo()
            .into_iter()
            .map(|(k, v)| (k.to_string(), Value::String(v)))
            .collect();
        let summary: Map<String, Value> = self
            .summary
            .iter()
            .map(|(k, v)| (k.to_string(), v.json()))
            .collect();
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Array(r.iter().map(Cell::json).collect()))
            .collect();
        json!({
            "gwer_version": VERSION,
            "command": self.command,
            "config": config,
            "columns": self.columns,
            "rows": rows,
            "summary": summary,
            "checks": self.checks,
        })
    }

    pub fn write_json<W: Write>(&self, cfg: &RunConfig, mut w: W) -> Result<(), CliError> {
        serde_json::to_writer_pretty(&mut w, &self.to_json(cfg))?;
        writeln!(w)?;
        Ok(())
    }

    /// Aligned plain-text table for terminals.
    pub fn render_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(Cell::csv).collect())
            .collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|i| {
                cells
                    .iter()
                    .map(|r| r[i].len())
                    .chain([self.columns[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |cols: Vec<&str>| -> String {
            cols.iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        out.push_str(&line(self.columns.clone()));
        out.push('\n');
        for r in &cells {
            out.push_str(&line(r.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        for (k, v) in &self.summary {
            out.push_str(&format!("{k} = {}\n", v.csv()));
        }
        for c in &self.checks {
            let verdict = if c.pass { "PASS" } else { "FAIL" };
            out.push_str(&format!("[{verdict}] {}: {}\n", c.name, c.detail));
        }
        out
    }
}

/// Command name and check verdicts recovered from an output file.
#[derive(Clone, Debug, PartialEq)]
pub struct FileVerdicts {
    pub command: String,
    pub checks: Vec<(String, bool)>,
}

/// Read back a CSV or JSON output file.
pub fn read_verdicts(text: &str) -> Result<FileVerdicts, CliError> {
    if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(text)?;
        let command = v["command"]
            .as_str()
            .ok_or_else(|| CliError::Usage("missing command field".into()))?
            .to_string();
        let checks = v["checks"]
            .as_array()
            .ok_or_else(|| CliError::Usage("missing checks field".into()))?
            .iter()
            .map(|c| {
                (
                    c["name"].as_str().unwrap_or_default().to_string(),
                    c["pass"].as_bool().unwrap_or(false),
                )
            })
            .collect();
        return Ok(FileVerdicts { command, checks });
    }
    if !text.starts_with("# gwer ") {
        return Err(CliError::Usage("not a gwer output file".into()));
    }
    let mut command = String::new();
    let mut checks = Vec::new();
    for line in text.lines() {
        if let Some(c) = line.strip_prefix("# command=") {
            command = c.to_string();
        } else if let Some(rest) = line.strip_prefix("# check ") {
            let mut parts = rest.splitn(3, ' ');
            let name = parts.next().unwrap_or_default().to_string();
            let pass = parts.next() == Some("PASS");
            checks.push((name, pass));
        }
    }
    Ok(FileVerdicts { command, checks })
}
