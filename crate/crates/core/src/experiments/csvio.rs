//! CSV artifacts: header row naming columns (units in parentheses where
//! meaningful), values in decimal scientific notation with 17 significant
//! digits (exact f64 round trip), newline-terminated.

use crate::error::LabError;
use crate::Result;
use std::fmt::Write as _;
use std::path::Path;

/// One cell of a CSV row.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// 17 significant digits: exact round trip for every finite f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Render a CSV document.
pub fn render_csv(header: &[&str], rows: &[Vec<Cell>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let mut first = true;
        for cell in row {
            if !first {
                out.push(',');
            }
            first = false;
            match cell {
                Cell::Float(v) => {
                    let _ = write!(out, "{}", fmt_f64(*v));
                }
                Cell::Int(v) => {
                    let _ = write!(out, "{v}");
                }
                Cell::Text(s) => {
                    let _ = write!(out, "{s}");
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Write a CSV file, creating parent directories.
pub fn emit_csv(path: &Path, header: &[&str], rows: &[Vec<Cell>]) -> Result<String> {
    let text = render_csv(header, rows);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| LabError::io(parent.display().to_string(), e))?;
    }
    std::fs::write(path, &text).map_err(|e| LabError::io(path.display().to_string(), e))?;
    Ok(text)
}

/// Parse the float columns of a rendered CSV back (used by round-trip checks).
pub fn parse_floats(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|line| line.split(',').filter_map(|tok| tok.parse::<f64>().ok()).collect())
        .collect()
}
