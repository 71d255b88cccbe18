//! Results bundles and their on-disk form: CSV tables, JSON summaries,
//! whitespace-separated plot series and a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    /// Tables and summaries only.
    CsvJson,
    /// Tables, summaries and two-column series for plotting.
    #[default]
    PlotData,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    /// Floats carry 17 significant digits so they parse back bit-exact.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
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

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let fail = |e: csv::Error| Error::Config(format!("csv encoding: {e}"));
        w.write_record(&self.header).map_err(fail)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(fail)?;
        }
        w.into_inner().map_err(|e| Error::Config(format!("csv encoding: {e}")))
    }
}

/// One series of (x, y) points; several series in one file are separated by blank lines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Incomplete,
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: RunStatus,
    /// Seed of realization r, shared by every sweep point.
    pub realization_seeds: Vec<u64>,
    pub tables: Vec<String>,
    pub summaries: Vec<String>,
    pub plots: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ResultsBundle {
    pub manifest: Manifest,
    pub tables: BTreeMap<String, Table>,
    pub summaries: BTreeMap<String, Value>,
    pub plots: BTreeMap<String, Vec<Series>>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl ResultsBundle {
    pub fn new(config: ExperimentConfig, realization_seeds: Vec<u64>) -> Self {
        Self {
            manifest: Manifest {
                config,
                code_version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix: unix_now(),
                finished_unix: None,
                status: RunStatus::Incomplete,
                realization_seeds,
                tables: Vec::new(),
                summaries: Vec::new(),
                plots: Vec::new(),
                warnings: Vec::new(),
            },
            tables: BTreeMap::new(),
            summaries: BTreeMap::new(),
            plots: BTreeMap::new(),
        }
    }

    pub fn add_table(&mut self, name: &str, table: Table) {
        self.tables.insert(format!("{name}.csv"), table);
    }

    pub fn add_summary(&mut self, name: &str, value: Value) {
        self.summaries.insert(format!("{name}.json"), value);
    }

    pub fn add_plot(&mut self, name: &str, series: Vec<Series>) {
        self.plots.insert(format!("{name}.dat"), series);
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{msg}");
        self.manifest.warnings.push(msg);
    }

    pub fn finish(&mut self) {
        self.manifest.tables = self.tables.keys().cloned().collect();
        self.manifest.summaries = self.summaries.keys().cloned().collect();
        self.manifest.plots = self.plots.keys().cloned().collect();
        self.manifest.finished_unix = Some(unix_now());
        self.manifest.status = RunStatus::Complete;
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn json_bytes(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| Error::Config(format!("json encoding: {e}")))?;
    v.push(b'\n');
    Ok(v)
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    write_file(&dir.join(MANIFEST_FILE), &json_bytes(manifest)?)
}

/// Creates `dir`, refusing a non-empty one unless `overwrite` is set.
pub fn prepare_output_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            if !overwrite {
                return Err(Error::OutputExists(dir.to_path_buf()));
            }
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn render_series(series: &[Series]) -> Vec<u8> {
    let mut out = String::new();
    for (k, s) in series.iter().enumerate() {
        if k > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!("# {}\n", s.label));
        for (x, y) in &s.points {
            out.push_str(&format!("{x:.16e} {y:.16e}\n"));
        }
    }
    out.into_bytes()
}

/// Writes the bundle's files and returns their paths; the manifest goes last.
pub fn emit_report(bundle: &ResultsBundle, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    if bundle.manifest.status != RunStatus::Complete {
        return Err(Error::Config("bundle is not complete".into()));
    }
    let mut written = Vec::new();
    for (name, table) in &bundle.tables {
        let p = dir.join(name);
        write_file(&p, &table.to_csv()?)?;
        written.push(p);
    }
    for (name, value) in &bundle.summaries {
        let p = dir.join(name);
        write_file(&p, &json_bytes(value)?)?;
        written.push(p);
    }
    if format == ReportFormat::PlotData {
        for (name, series) in &bundle.plots {
            let p = dir.join(name);
            write_file(&p, &render_series(series))?;
            written.push(p);
        }
    }
    let mut manifest = bundle.manifest.clone();
    if format == ReportFormat::CsvJson {
        manifest.plots.clear();
    }
    write_manifest(dir, &manifest)?;
    written.push(dir.join(MANIFEST_FILE));
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_csv_dialect() {
        let mut t = Table::new(&["a", "b", "c"]);
        t.push(vec![Cell::from(1usize), Cell::from(0.1), Cell::from("x")]);
        t.push(vec![Cell::from(-2i64), Cell::from(1.0 / 3.0), Cell::from(true)]);
        let s = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert!(!s.contains('\r'));
        assert_eq!(s.lines().next(), Some("a,b,c"));
        let mut r = csv::Reader::from_reader(s.as_bytes());
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.1);
        assert_eq!(rows[1][1].parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn test_float_rendering_round_trips() {
        for v in [0.0, -0.0, 1e-300, std::f64::consts::PI, 123456789.123456789, f64::MAX] {
            let s = Cell::Float(v).render();
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn test_series_rendering() {
        let s = render_series(&[
            Series { label: "a".into(), points: vec![(0.0, 1.0)] },
            Series { label: "b".into(), points: vec![(1.0, 2.0), (2.0, 3.0)] },
        ]);
        let text = String::from_utf8(s).unwrap();
        assert_eq!(text.split("\n\n").count(), 2);
        assert!(text.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).all(|l| l.split(' ').count() == 2));
    }
}
