//! Datasets, vertical feature splits and built-in generators.

mod categorical;
mod libsvm;
pub mod synth;

use std::ops::Range;
use std::path::PathBuf;

use crate::error::{Error, Result};

pub use categorical::load_categorical_csv;
pub use libsvm::{load_libsvm, parse_libsvm, save_libsvm, write_libsvm};

/// Environment variable naming a directory with local dataset files.
pub const DATA_DIR_ENV: &str = "VFL_DATA_DIR";

/// Sparse row: `(column, value)` pairs in increasing column order.
pub type SparseRow = Vec<(usize, f64)>;

/// One categorical column.
#[derive(Clone, Debug, PartialEq)]
pub struct CatField {
    pub name: String,
    pub vocab: usize,
    pub values: Vec<usize>,
}

/// A collocated labelled dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub cols: usize,
    pub rows: Vec<SparseRow>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Categorical fields; field 0 goes to A and field 1 to B on a split.
    pub cat: Vec<CatField>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn avg_nnz(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.len()).sum::<usize>() as f64 / self.rows.len() as f64
    }

    /// First `n` rows and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let part = |r: Range<usize>| Dataset {
            cols: self.cols,
            rows: self.rows[r.clone()].to_vec(),
            labels: self.labels[r.clone()].to_vec(),
            classes: self.classes,
            cat: self
                .cat
                .iter()
                .map(|f| CatField { name: f.name.clone(), vocab: f.vocab, values: f.values[r.clone()].to_vec() })
                .collect(),
        };
        (part(0..n), part(n..self.len()))
    }

    /// Keeps only the columns in `range`, renumbered from zero.
    pub fn select_columns(&self, range: Range<usize>) -> Vec<SparseRow> {
        self.rows
            .iter()
            .map(|r| r.iter().filter(|(c, _)| range.contains(c)).map(|&(c, v)| (c - range.start, v)).collect())
            .collect()
    }

    /// Largest absolute feature value.
    pub fn max_abs(&self) -> f64 {
        self.rows.iter().flatten().fold(0.0, |m, &(_, v)| m.max(v.abs()))
    }
}

/// Feature ranges per party; B owns the labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerticalSplit {
    pub a: Range<usize>,
    pub b: Range<usize>,
}

impl VerticalSplit {
    /// A takes the first `ceil(cols / 2)` columns.
    pub fn even(cols: usize) -> VerticalSplit {
        let mid = cols.div_ceil(2);
        VerticalSplit { a: 0..mid, b: mid..cols }
    }

    /// Validates that the ranges are disjoint and cover `0..cols`.
    pub fn new(a: Range<usize>, b: Range<usize>, cols: usize) -> Result<VerticalSplit> {
        let mut parts = [a.clone(), b.clone()];
        parts.sort_by_key(|r| (r.start, r.end));
        if parts.iter().any(|r| r.start > r.end) {
            return Err(Error::Config("reversed feature range".into()));
        }
        if parts[0].start != 0 || parts[1].end != cols {
            return Err(Error::Config(format!("feature ranges do not cover 0..{cols}")));
        }
        if parts[0].end > parts[1].start {
            return Err(Error::Config(format!("feature ranges overlap at column {}", parts[1].start)));
        }
        if parts[0].end < parts[1].start {
            return Err(Error::Config(format!("feature ranges leave a gap at columns {}..{}", parts[0].end, parts[1].start)));
        }
        Ok(VerticalSplit { a, b })
    }

    /// Parses `even` or `a_start..a_end,b_start..b_end`.
    pub fn parse(s: &str, cols: usize) -> Result<VerticalSplit> {
        if s == "even" {
            return Ok(VerticalSplit::even(cols));
        }
        let range = |p: &str| -> Result<Range<usize>> {
            let (lo, hi) = p.split_once("..").ok_or_else(|| Error::Config(format!("bad range `{p}`")))?;
            let n = |v: &str| v.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad range `{p}`")));
            Ok(n(lo)?..n(hi)?)
        };
        let (a, b) = s.split_once(',').ok_or_else(|| Error::Config(format!("bad split `{s}`")))?;
        VerticalSplit::new(range(a)?, range(b)?, cols)
    }
}

/// What one party holds of an aligned dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PartyView {
    pub cols: usize,
    pub rows: Vec<SparseRow>,
    pub cat: Option<CatField>,
    /// Present at B only.
    pub labels: Option<Vec<usize>>,
    pub classes: usize,
}

impl PartyView {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// First `n` instances and the rest.
    pub fn split_rows(&self, n: usize) -> (PartyView, PartyView) {
        let n = n.min(self.len());
        let part = |r: Range<usize>| PartyView {
            cols: self.cols,
            rows: self.rows[r.clone()].to_vec(),
            cat: self.cat.as_ref().map(|f| CatField { values: f.values[r.clone()].to_vec(), ..f.clone() }),
            labels: self.labels.as_ref().map(|l| l[r.clone()].to_vec()),
            classes: self.classes,
        };
        (part(0..n), part(n..self.len()))
    }
}

/// Column partition of `ds`. Returns `(A's view, B's view)`.
pub fn vsplit(ds: &Dataset, split: &VerticalSplit) -> Result<(PartyView, PartyView)> {
    VerticalSplit::new(split.a.clone(), split.b.clone(), ds.cols)?;
    let view = |range: &Range<usize>, cat: Option<&CatField>, labels: Option<Vec<usize>>| PartyView {
        cols: range.len(),
        rows: ds.select_columns(range.clone()),
        cat: cat.cloned(),
        labels,
        classes: ds.classes,
    };
    Ok((view(&split.a, ds.cat.first(), None), view(&split.b, ds.cat.get(1), Some(ds.labels.clone()))))
}

/// Inverse of [`vsplit`].
pub fn merge(a: &PartyView, b: &PartyView, split: &VerticalSplit) -> Result<Dataset> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("party views have {} and {} rows", a.len(), b.len())));
    }
    let labels = b.labels.clone().ok_or_else(|| Error::Config("B's view carries no labels".into()))?;
    let rows = a
        .rows
        .iter()
        .zip(&b.rows)
        .map(|(ra, rb)| {
            let mut r: SparseRow = ra.iter().map(|&(c, v)| (c + split.a.start, v)).collect();
            r.extend(rb.iter().map(|&(c, v)| (c + split.b.start, v)));
            r.sort_by_key(|&(c, _)| c);
            r
        })
        .collect();
    Ok(Dataset {
        cols: a.cols + b.cols,
        rows,
        labels,
        classes: b.classes,
        cat: a.cat.iter().chain(b.cat.iter()).cloned().collect(),
    })
}

/// Path of `name` under the data directory, if the variable is set and
/// the file exists.
pub fn local_dataset(name: &str) -> Option<PathBuf> {
    let dir = std::env::var_os(DATA_DIR_ENV)?;
    let p = PathBuf::from(dir).join(name);
    p.is_file().then_some(p)
}
