//! Categorical CSV: a header row, a `label` column, categorical columns
//! named `cat_*` (any string value, vocabulary in first-seen order) and
//! numeric columns for everything else.

use std::collections::HashMap;
use std::path::Path;

use super::{CatField, Dataset, SparseRow};
use crate::error::{Error, Result};

pub fn load_categorical_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(e, 0))?;
    let header = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    let label_col = header
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| Error::Data { line: 1, msg: "no `label` column".into() })?;
    let cat_cols: Vec<usize> = (0..header.len()).filter(|&i| header[i].starts_with("cat_")).collect();
    let num_cols: Vec<usize> = (0..header.len()).filter(|&i| i != label_col && !cat_cols.contains(&i)).collect();
    let mut vocabs: Vec<HashMap<String, usize>> = vec![HashMap::new(); cat_cols.len()];
    let mut cat_values: Vec<Vec<usize>> = vec![Vec::new(); cat_cols.len()];
    let mut rows: Vec<SparseRow> = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    for (n, rec) in reader.records().enumerate() {
        let line = n + 2;
        let rec = rec.map_err(|e| csv_error(e, line))?;
        let label = &rec[label_col];
        raw_labels.push(label.trim().parse().map_err(|_| Error::Data { line, msg: format!("bad label `{label}`") })?);
        for (k, &c) in cat_cols.iter().enumerate() {
            let next = vocabs[k].len();
            cat_values[k].push(*vocabs[k].entry(rec[c].to_string()).or_insert(next));
        }
        let mut row = Vec::new();
        for (j, &c) in num_cols.iter().enumerate() {
            let v: f64 = rec[c].trim().parse().map_err(|_| Error::Data { line, msg: format!("bad number `{}`", &rec[c]) })?;
            if v != 0.0 {
                row.push((j, v));
            }
        }
        rows.push(row);
    }
    let mut distinct = raw_labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let labels = raw_labels.iter().map(|l| distinct.binary_search(l).expect("present")).collect();
    let cat = cat_cols
        .iter()
        .zip(vocabs.iter().zip(cat_values))
        .map(|(&c, (v, values))| CatField { name: header[c].to_string(), vocab: v.len().max(1), values })
        .collect();
    Ok(Dataset { cols: num_cols.len(), rows, labels, classes: distinct.len().max(2), cat })
}

fn csv_error(e: csv::Error, line: usize) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    Error::Data { line, msg: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fields() {
        let dir = std::env::temp_dir().join(format!("vfl-cat-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("d.csv");
        std::fs::write(&p, "label,x1,cat_city,x2,cat_dev\n1,0.5,paris,0,ios\n0,0,rome,2,ios\n1,1,paris,0,web\n").unwrap();
        let ds = load_categorical_csv(&p).unwrap();
        assert_eq!(ds.cols, 2);
        assert_eq!(ds.labels, vec![1, 0, 1]);
        assert_eq!(ds.rows, vec![vec![(0, 0.5)], vec![(1, 2.0)], vec![(0, 1.0)]]);
        assert_eq!(ds.cat[0].values, vec![0, 1, 0]);
        assert_eq!((ds.cat[1].vocab, ds.cat[1].values.clone()), (2, vec![0, 0, 1]));
        std::fs::write(&p, "label,x1\n1,0.5\n0,abc\n").unwrap();
        assert!(matches!(load_categorical_csv(&p), Err(Error::Data { line: 3, .. })));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
