//! CSV, JSON and gnuplot persistence.
//!
//! Floats are written with 17 significant digits so every value reads back
//! bit-identical.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// `{:.16e}`: 17 significant digits, enough for an exact round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Coordinate columns (`x`, or `x,y`) of `grid` followed by `columns`.
    pub fn from_grid(grid: &Grid, columns: &[(&str, &[f64])]) -> Self {
        let coords: &[&str] = if grid.dim() == 1 { &["x"] } else { &["x", "y"] };
        let mut header: Vec<&str> = coords.to_vec();
        header.extend(columns.iter().map(|(name, _)| *name));
        let mut table = Self::new(&header);
        for (i, p) in grid.nodes.iter().enumerate() {
            let mut row = p[..grid.dim()].to_vec();
            row.extend(columns.iter().map(|(_, c)| c[i]));
            table.rows.push(row);
        }
        table
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(&self.header).map_err(|e| csv_error(path, e))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|&v| fmt_f64(v)))
                .map_err(|e| csv_error(path, e))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = r
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let row = record
                .iter()
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|e| Error::Format {
                        path: path.to_path_buf(),
                        msg: format!("row {}: {v:?}: {e}", line + 1),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Two whitespace-separated columns, one point per line.
pub fn write_gnuplot(path: &Path, label: &str, xs: &[f64], ys: &[f64]) -> Result<()> {
    let mut text = format!("# s {label}\n");
    for (x, y) in xs.iter().zip(ys) {
        text.push_str(&format!("{} {}\n", fmt_f64(*x), fmt_f64(*y)));
    }
    fs::write(path, text)?;
    Ok(())
}
