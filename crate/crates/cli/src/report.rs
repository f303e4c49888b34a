//! Run reports (versioned JSON) and plot-ready tables (RFC 4180 CSV).

use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

/// One declared tolerance and whether the run met it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub name: String,
    pub value: f64,
    /// "<", "<=", ">", ">=" against `threshold`.
    pub relation: String,
    pub threshold: f64,
    pub pass: bool,
}

impl Verdict {
    pub fn below(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: "<".into(),
            threshold,
            pass: value < threshold,
        }
    }

    pub fn at_most(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: "<=".into(),
            threshold,
            pass: value <= threshold,
        }
    }

    pub fn at_least(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            relation: ">=".into(),
            threshold,
            pass: value >= threshold,
        }
    }

    /// A boolean property, recorded as 1 / 0 against 1.
    pub fn holds(name: &str, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            relation: ">=".into(),
            threshold: 1.0,
            pass: ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, dir: &Path, prefix: &str) -> std::io::Result<PathBuf> {
        let path = dir.join(format!("{prefix}_{}.csv", self.name));
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_path(&path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// Shortest round-trip formatting, so tables are reproducible bit for bit.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Software {
    pub name: &'static str,
    pub version: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedStream {
    pub purpose: String,
    pub seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// Wall clock; the only field that differs between identical runs.
    pub timestamp: String,
    pub software: Software,
    pub subcommand: String,
    pub criterion: String,
    pub config: Value,
    pub seeds: Vec<SeedStream>,
    pub results: Value,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
}

pub fn timestamp(start: SystemTime, elapsed: Duration) -> String {
    let since = start.duration_since(UNIX_EPOCH).unwrap_or_default();
    format!("started unix {}.{:03} s, wall {:.3} s", since.as_secs(), since.subsec_millis(), elapsed.as_secs_f64())
}

impl RunReport {
    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join(format!("{}.json", self.subcommand));
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }

    pub fn failing(&self) -> Vec<&Verdict> {
        self.verdicts.iter().filter(|v| !v.pass).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_per_rfc4180() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new("t", &["a", "b"]);
        t.push(vec!["x,y".into(), "say \"hi\"".into()]);
        let p = t.write(dir.path(), "run").unwrap();
        let s = std::fs::read_to_string(p).unwrap();
        assert_eq!(s, "a,b\r\n\"x,y\",\"say \"\"hi\"\"\"\r\n");
    }

    #[test]
    fn timestamp_is_one_line() {
        let s = timestamp(SystemTime::now(), Duration::from_millis(1500));
        assert!(!s.contains('\n') && s.contains("wall 1.500 s"));
    }
}
