use std::fs;
use std::path::{Path, PathBuf};

use rasper::{RasperError, Result};
use serde::Serialize;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RasperError + '_ {
    move |source| RasperError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| RasperError::Parse(e.to_string()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn join(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// A CSV file kept as strings, so rows can be echoed back unchanged.
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| RasperError::Parse(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| RasperError::Parse(format!("{}: {e}", path.display())))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        if rows.is_empty() {
            return Err(RasperError::EmptyData(0));
        }
        Ok(Self { headers, rows })
    }

    pub fn index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| RasperError::SchemaMismatch(format!("no column `{name}`")))
    }

    fn cell(&self, col: usize, row: usize) -> Result<&str> {
        let v = self.rows[row][col].trim();
        if v.is_empty() || v == "NA" {
            return Err(RasperError::MissingValue {
                column: self.headers[col].clone(),
                row: row + 1,
            });
        }
        Ok(v)
    }

    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let col = self.index(name)?;
        (0..self.rows.len())
            .map(|r| {
                let v = self.cell(col, r)?;
                v.parse::<f64>()
                    .map_err(|_| RasperError::Parse(format!("column `{name}` row {}: `{v}` is not a number", r + 1)))
            })
            .collect()
    }

    /// Accepts 0/1 and true/false.
    pub fn flags(&self, name: &str) -> Result<Vec<bool>> {
        let col = self.index(name)?;
        (0..self.rows.len())
            .map(|r| match self.cell(col, r)?.to_ascii_lowercase().as_str() {
                "1" | "true" => Ok(true),
                "0" | "false" => Ok(false),
                v => Err(RasperError::Parse(format!(
                    "column `{name}` row {}: `{v}` is not 0/1",
                    r + 1
                ))),
            })
            .collect()
    }

    /// The table with extra columns appended, as CSV bytes.
    pub fn with_columns(&self, extra: &[(&str, Vec<String>)]) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| RasperError::Parse(e.to_string());
        let mut header = self.headers.clone();
        header.extend(extra.iter().map(|(h, _)| h.to_string()));
        w.write_record(&header).map_err(err)?;
        for (r, row) in self.rows.iter().enumerate() {
            let mut out = row.clone();
            out.extend(extra.iter().map(|(_, v)| v[r].clone()));
            w.write_record(&out).map_err(err)?;
        }
        w.into_inner().map_err(|e| RasperError::Parse(e.to_string()))
    }
}

pub fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| RasperError::Parse(e.to_string());
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.into_inner().map_err(|e| RasperError::Parse(e.to_string()))
}
