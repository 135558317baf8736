//! LIBSVM text format: `label idx:val idx:val ...`, one instance per line.
//!
//! Indices are 1-based unless some line uses index 0, in which case the
//! whole file is read as 0-based. Labels drawn from `{-1, 0, +1}` with at
//! most two distinct values map to `{0, 1}` (non-positive to 0); any other
//! label set maps to `0..K` in increasing numeric order.

use std::fmt::Write as _;
use std::path::Path;

use super::{Dataset, SparseRow};
use crate::error::{Error, Result};

pub fn load_libsvm(path: &Path, cols: Option<usize>) -> Result<Dataset> {
    parse_libsvm(&std::fs::read_to_string(path)?, cols)
}

/// Parses LIBSVM text. `cols` is the declared dimensionality; without it
/// the largest index seen decides.
pub fn parse_libsvm(text: &str, cols: Option<usize>) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut raw_rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut lines = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Data { line: n + 1, msg };
        let mut tokens = line.split_whitespace();
        let label = tokens.next().expect("non-empty line");
        let label: f64 = label.parse().map_err(|_| err(format!("bad label `{label}`")))?;
        if !label.is_finite() {
            return Err(err(format!("bad label `{label}`")));
        }
        let mut row = Vec::new();
        for tok in tokens {
            let (i, v) = tok.split_once(':').ok_or_else(|| err(format!("expected idx:val, got `{tok}`")))?;
            let i: usize = i.parse().map_err(|_| err(format!("bad index `{i}`")))?;
            let v: f64 = v.parse().map_err(|_| err(format!("bad value `{v}`")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value `{v}`")));
            }
            if row.last().is_some_and(|&(p, _)| p >= i) {
                return Err(err(format!("indices not increasing at `{tok}`")));
            }
            row.push((i, v));
        }
        raw_labels.push(label);
        raw_rows.push(row);
        lines.push(n + 1);
    }
    let zero_based = raw_rows.iter().flatten().any(|&(i, _)| i == 0);
    let offset = usize::from(!zero_based);
    let max_col = raw_rows.iter().flatten().map(|&(i, _)| i - offset + 1).max().unwrap_or(0);
    let cols = cols.unwrap_or(max_col);
    let mut rows: Vec<SparseRow> = Vec::with_capacity(raw_rows.len());
    for (row, &line) in raw_rows.into_iter().zip(&lines) {
        let mut out = Vec::with_capacity(row.len());
        for (i, v) in row {
            let c = i - offset;
            if c >= cols {
                return Err(Error::Data { line, msg: format!("index {i} overflows {cols} declared features") });
            }
            if v != 0.0 {
                out.push((c, v));
            }
        }
        rows.push(out);
    }
    let (labels, classes) = remap_labels(&raw_labels);
    Ok(Dataset { cols, rows, labels, classes, cat: Vec::new() })
}

fn remap_labels(raw: &[f64]) -> (Vec<usize>, usize) {
    let mut distinct: Vec<f64> = raw.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    distinct.dedup();
    let binary = distinct.len() <= 2 && distinct.iter().all(|&l| l == -1.0 || l == 0.0 || l == 1.0);
    if binary {
        return (raw.iter().map(|&l| usize::from(l > 0.0)).collect(), 2);
    }
    let labels = raw
        .iter()
        .map(|l| distinct.iter().position(|d| d == l).expect("present"))
        .collect();
    (labels, distinct.len())
}

/// LIBSVM text with 1-based indices and class indices as labels.
pub fn write_libsvm(ds: &Dataset) -> String {
    let mut out = String::new();
    for (row, label) in ds.rows.iter().zip(&ds.labels) {
        write!(out, "{label}").expect("string write");
        for &(c, v) in row {
            write!(out, " {}:{}", c + 1, v).expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn save_libsvm(ds: &Dataset, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, write_libsvm(ds))?)
}
