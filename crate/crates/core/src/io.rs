//! Snapshot, diagnostics and metadata writers.
//!
//! CSV snapshots start with `# t=<time> field=<name> nx=<nx> ny=<ny>` and
//! then hold one line per grid row, bottom row first, each value written with
//! 17 significant digits so that parsing returns the same bits. PGM
//! snapshots are binary P5 images scaled from the field's min/max, which are
//! recorded in the comment line; the top grid row comes first so the image
//! is upright.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad snapshot: {0}")]
    Record(String),
    #[error("cannot parse snapshot line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotFormat {
    #[default]
    Csv,
    Pgm,
}

impl SnapshotFormat {
    pub fn extension(self) -> &'static str {
        match self {
            SnapshotFormat::Csv => "csv",
            SnapshotFormat::Pgm => "pgm",
        }
    }
}

impl FromStr for SnapshotFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(SnapshotFormat::Csv),
            "pgm" => Ok(SnapshotFormat::Pgm),
            _ => Err(format!("unknown format `{s}` (expected csv or pgm)")),
        }
    }
}

/// One scalar field on the full grid, row-major with `values[j * nx + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRecord {
    pub time: f64,
    pub field: String,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl SnapshotRecord {
    pub fn new(time: f64, field: &str, nx: usize, ny: usize, values: Vec<f64>) -> Result<Self, IoError> {
        let r = Self { time, field: field.to_string(), nx, ny, values };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if self.values.len() != self.nx * self.ny {
            return Err(IoError::Record(format!(
                "{} values for a {}x{} grid",
                self.values.len(),
                self.nx,
                self.ny
            )));
        }
        if let Some(k) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(IoError::Record(format!("non-finite value at index {k} of `{}`", self.field)));
        }
        if self.field.is_empty() || self.field.contains(char::is_whitespace) {
            return Err(IoError::Record(format!("bad field name `{}`", self.field)));
        }
        Ok(())
    }

    /// `<field>_t<time>.<ext>` with a fixed-width time.
    pub fn file_name(&self, format: SnapshotFormat) -> String {
        format!("{}_t{:012.6}.{}", self.field, self.time, format.extension())
    }
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn snapshot_csv(r: &SnapshotRecord) -> String {
    let mut s = format!("# t={} field={} nx={} ny={}\n", format_value(r.time), r.field, r.nx, r.ny);
    for row in r.values.chunks(r.nx.max(1)) {
        let line: Vec<String> = row.iter().map(|&v| format_value(v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_snapshot_csv(text: &str) -> Result<SnapshotRecord, IoError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(IoError::Parse { line: 1, message: "empty file".into() })?;
    let rest = header
        .strip_prefix("# ")
        .ok_or(IoError::Parse { line: 1, message: "missing `# ` header".into() })?;
    let (mut time, mut field, mut nx, mut ny) = (None, None, None, None);
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or(IoError::Parse { line: 1, message: format!("bad token `{kv}`") })?;
        let bad = |m: String| IoError::Parse { line: 1, message: m };
        match k {
            "t" => time = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "field" => field = Some(v.to_string()),
            "nx" => nx = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "ny" => ny = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            _ => return Err(bad(format!("unknown key `{k}`"))),
        }
    }
    let missing = |k: &str| IoError::Parse { line: 1, message: format!("header lacks `{k}`") };
    let (time, field, nx, ny) =
        (time.ok_or(missing("t"))?, field.ok_or(missing("field"))?, nx.ok_or(missing("nx"))?, ny.ok_or(missing("ny"))?);
    let mut values = Vec::with_capacity(nx * ny);
    for (k, line) in lines.enumerate() {
        let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        let row = row.map_err(|e| IoError::Parse { line: k + 2, message: e.to_string() })?;
        if row.len() != nx {
            return Err(IoError::Parse { line: k + 2, message: format!("{} values, expected {nx}", row.len()) });
        }
        values.extend(row);
    }
    SnapshotRecord::new(time, &field, nx, ny, values)
}

/// Binary P5 image; a constant field maps to all zeros.
pub fn snapshot_pgm(r: &SnapshotRecord) -> Vec<u8> {
    let min = r.values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = r.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!(
        "P5\n# t={} field={} min={} max={}\n{} {}\n255\n",
        format_value(r.time),
        r.field,
        format_value(min),
        format_value(max),
        r.nx,
        r.ny
    )
    .into_bytes();
    let range = max - min;
    for j in (0..r.ny).rev() {
        for &v in &r.values[j * r.nx..(j + 1) * r.nx] {
            let px = if range > 0.0 { ((v - min) / range * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 };
            out.push(px);
        }
    }
    out
}

pub fn write_snapshot(r: &SnapshotRecord, format: SnapshotFormat, dir: &Path) -> Result<PathBuf, IoError> {
    r.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(r.file_name(format));
    let bytes = match format {
        SnapshotFormat::Csv => snapshot_csv(r).into_bytes(),
        SnapshotFormat::Pgm => snapshot_pgm(r),
    };
    fs::write(&path, bytes).map_err(io_err(&path))?;
    Ok(path)
}

/// Accumulates a CSV table of numeric columns and writes it in one go.
#[derive(Debug, Clone)]
pub struct CsvTable {
    header: Vec<String>,
    body: String,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), body: String::new() }
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.header.len(), "row width");
        let cells: Vec<String> = row.iter().map(|&v| format_value(v)).collect();
        let _ = writeln!(self.body, "{}", cells.join(","));
    }

    pub fn render(&self) -> String {
        format!("{}\n{}", self.header.join(","), self.body)
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(path, self.render()).map_err(io_err(path))
    }
}

/// `metadata.json` with the resolved configuration, seed and version.
pub fn write_metadata<T: Serialize>(dir: &Path, config: &T, seed: u64, extra: serde_json::Value) -> Result<PathBuf, IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = serde_json::json!({
        "program": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": config,
        "run": extra,
    });
    let path = dir.join("metadata.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| IoError::Record(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(path)
}
