//! Artifact files: CSV tables with 17 significant digits and pretty JSON.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use hjreg::action::fmt_num;
use hjreg::probe::Table;
use serde::Serialize;

/// Writes artifacts into one directory and remembers their names.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Sorted names of the files written so far.
    pub fn files(&self) -> Vec<String> {
        let mut f = self.files.clone();
        f.sort();
        f.dedup();
        f
    }

    fn register(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    /// Numeric CSV with a header row.
    pub fn csv<S: AsRef<str>>(&mut self, name: &str, header: &[S], rows: &[Vec<f64>]) -> io::Result<()> {
        let path = self.register(name);
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header.iter().map(|h| h.as_ref()))?;
        for row in rows {
            w.write_record(row.iter().map(|v| fmt_num(*v)))?;
        }
        w.flush()
    }

    pub fn table(&mut self, name: &str, table: &Table) -> io::Result<()> {
        self.csv(name, &table.columns, &table.rows)
    }

    /// Free-form text produced by a library writer.
    pub fn with_writer(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
        let path = self.register(name);
        let mut file = io::BufWriter::new(fs::File::create(path)?);
        f(&mut file)?;
        file.flush()
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let path = self.register(name);
        write_json(&path, value)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

/// One acceptance assertion and its outcome.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub relation: &'static str,
    pub passed: bool,
}

impl Check {
    /// `value ≤ bound`.
    pub fn le(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            relation: "<=",
            passed: value <= bound,
        }
    }

    /// `value ≥ bound`.
    pub fn ge(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            relation: ">=",
            passed: value >= bound,
        }
    }

    /// A boolean property, recorded as `1 == 1`.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            bound: 1.0,
            relation: "==",
            passed: ok,
        }
    }
}

/// What an experiment hands back for the manifest.
#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn push(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}
