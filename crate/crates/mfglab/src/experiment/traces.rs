//! Columnar trace tables: the raw numerical record every report is a pure
//! function of. Float formatting uses Rust's shortest round-trip `Display`,
//! so a parse-format cycle is byte-stable.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::ArtifactCorrupt(format!("missing column `{name}`")))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(mut input: R) -> Result<Self> {
        let mut header = String::new();
        input.read_line(&mut header)?;
        let columns: Vec<String> = header.trim().split(',').map(|s| s.to_string()).collect();
        if columns.is_empty() || columns[0].is_empty() {
            return Err(Error::ArtifactCorrupt("empty trace header".into()));
        }
        let mut rows = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .trim()
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::ArtifactCorrupt(format!("bad trace cell: {e}")))?;
            if row.len() != columns.len() {
                return Err(Error::ArtifactCorrupt("ragged trace row".into()));
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }
}

/// Named trace tables persisted under `<out>/traces/<name>.csv`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceSet {
    pub tables: BTreeMap<String, Table>,
}

impl TraceSet {
    pub fn insert(&mut self, name: &str, table: Table) {
        self.tables.insert(name.to_string(), table);
    }

    pub fn get(&self, name: &str) -> Result<&Table> {
        self.tables
            .get(name)
            .ok_or_else(|| Error::ArtifactCorrupt(format!("missing trace `{name}`")))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let tdir = dir.join("traces");
        std::fs::create_dir_all(&tdir)?;
        for (name, table) in &self.tables {
            let file = std::fs::File::create(tdir.join(format!("{name}.csv")))?;
            table.write_csv(std::io::BufWriter::new(file))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let tdir = dir.join("traces");
        let mut set = TraceSet::default();
        if !tdir.is_dir() {
            return Err(Error::ArtifactCorrupt("missing traces directory".into()));
        }
        let mut entries: Vec<_> = std::fs::read_dir(&tdir)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().map(|x| x == "csv").unwrap_or(false))
            .collect();
        entries.sort();
        for path in entries {
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::ArtifactCorrupt("bad trace filename".into()))?
                .to_string();
            let file = std::fs::File::open(&path)?;
            set.tables
                .insert(name, Table::read_csv(BufReader::new(file))?);
        }
        Ok(set)
    }
}
