//! Output files. Every file carries the tool version and the scenario hash:
//! CSV files as `#` header lines, JSON files as an envelope around `data`.
//! Nothing time-dependent is written, so identical scenarios give
//! byte-identical files.

use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::Scenario;
use crate::{CliError, Result, TOOL_NAME, TOOL_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// SHA-256 of the canonical scenario JSON with `output_dir` cleared, so the
/// same scenario written to another directory hashes the same.
pub fn scenario_hash(scenario: &Scenario) -> String {
    let mut s = scenario.clone();
    s.output_dir = PathBuf::new();
    hex::encode(Sha256::digest(s.to_canonical_json().as_bytes()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Column-major-friendly numeric table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Extra `key=value` header lines.
    pub metadata: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
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

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            // shortest round-trip form; exponent only for very small/large values
            Cell::Num(v) if *v == 0.0 || (1e-4..1e15).contains(&v.abs()) || !v.is_finite() => write!(f, "{v}"),
            Cell::Num(v) => write!(f, "{v:e}"),
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.push((key.to_string(), value.to_string()));
        self
    }

    fn to_json_value(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = self
            .rows
            .iter()
            .map(|r| {
                self.columns
                    .iter()
                    .cloned()
                    .zip(r.iter().map(|c| serde_json::to_value(c).expect("cell serializes")))
                    .collect()
            })
            .collect();
        let meta: serde_json::Map<String, serde_json::Value> = self
            .metadata
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect();
        serde_json::json!({ "metadata": meta, "rows": rows })
    }
}

/// Writes files under one directory, all stamped with the same header.
#[derive(Clone, Debug)]
pub struct Output {
    pub dir: PathBuf,
    pub format: Format,
    pub config_sha256: String,
    pub command: String,
    written: std::cell::RefCell<Vec<PathBuf>>,
}

impl Output {
    pub fn new(dir: PathBuf, format: Format, scenario: &Scenario, command: &str) -> Self {
        Self {
            dir,
            format,
            config_sha256: scenario_hash(scenario),
            command: command.to_string(),
            written: Default::default(),
        }
    }

    /// Files written so far, relative to the output directory.
    pub fn written(&self) -> Vec<PathBuf> {
        self.written.borrow().clone()
    }

    fn header_lines(&self) -> Vec<(String, String)> {
        vec![
            ("tool".into(), format!("{TOOL_NAME} {TOOL_VERSION}")),
            ("config_sha256".into(), self.config_sha256.clone()),
            ("command".into(), self.command.clone()),
        ]
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Io {
                path: parent.to_path_buf(),
                source: e,
            })?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::Io {
            path: path.clone(),
            source: e,
        })?;
        self.written.borrow_mut().push(PathBuf::from(name));
        Ok(path)
    }

    /// `# key=value` lines: the standard header followed by `extra`.
    pub fn header_text(&self, extra: &[(String, String)]) -> String {
        let mut s = String::new();
        for (k, v) in self.header_lines().iter().chain(extra) {
            writeln!(s, "# {k}={v}").unwrap();
        }
        s
    }

    pub fn csv_text(&self, table: &Table) -> String {
        let mut s = self.header_text(&table.metadata);
        writeln!(s, "{}", table.columns.join(",")).unwrap();
        for row in &table.rows {
            let cells: Vec<String> = row.iter().map(ToString::to_string).collect();
            writeln!(s, "{}", cells.join(",")).unwrap();
        }
        s
    }

    pub fn json_text<T: Serialize>(&self, data: &T) -> String {
        let envelope = serde_json::json!({
            "tool": TOOL_NAME,
            "version": TOOL_VERSION,
            "config_sha256": self.config_sha256,
            "command": self.command,
            "data": data,
        });
        let mut s = serde_json::to_string_pretty(&envelope).expect("output serializes");
        s.push('\n');
        s
    }

    /// Curve output as `<stem>.csv` or `<stem>.json` by the chosen format.
    pub fn write_table(&self, stem: &str, table: &Table) -> Result<PathBuf> {
        match self.format {
            Format::Csv => self.write_bytes(&format!("{stem}.csv"), self.csv_text(table).as_bytes()),
            Format::Json => self.write_bytes(&format!("{stem}.json"), self.json_text(&table.to_json_value()).as_bytes()),
        }
    }

    /// Counts tables are always CSV: they are the input format of `analyze`.
    pub fn write_csv(&self, name: &str, table: &Table) -> Result<PathBuf> {
        self.write_bytes(name, self.csv_text(table).as_bytes())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, data: &T) -> Result<PathBuf> {
        self.write_bytes(name, self.json_text(data).as_bytes())
    }
}

/// `data` of an output envelope, or the document itself when it has none.
pub fn envelope_data(value: serde_json::Value) -> serde_json::Value {
    match value {
        serde_json::Value::Object(mut m) if m.contains_key("config_sha256") && m.contains_key("data") => m.remove("data").unwrap(),
        v => v,
    }
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_output_dir() {
        let a = Scenario::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(scenario_hash(&a), scenario_hash(&b));
        b.seed += 1;
        assert_ne!(scenario_hash(&a), scenario_hash(&b));
    }

    #[test]
    fn csv_carries_the_header() {
        let out = Output::new(PathBuf::from("."), Format::Csv, &Scenario::default(), "test");
        let mut t = Table::new(["x", "y"]).meta("note", "a");
        t.push(vec![1.5.into(), 2usize.into()]);
        let s = out.csv_text(&t);
        let lines: Vec<&str> = s.lines().collect();
        assert!(lines[0].starts_with("# tool=qpm "));
        assert!(lines[1].starts_with("# config_sha256="));
        assert_eq!(lines[2], "# command=test");
        assert_eq!(lines[3], "# note=a");
        assert_eq!(&lines[4..], &["x,y", "1.5,2"]);
    }

    #[test]
    fn envelope_round_trip() {
        let out = Output::new(PathBuf::from("."), Format::Json, &Scenario::default(), "test");
        let v: serde_json::Value = serde_json::from_str(&out.json_text(&serde_json::json!({"a": 1}))).unwrap();
        assert_eq!(envelope_data(v), serde_json::json!({"a": 1}));
        assert_eq!(envelope_data(serde_json::json!({"a": 1})), serde_json::json!({"a": 1}));
    }
}
