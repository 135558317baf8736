//! Seeded synthetic datasets standing in for the public benchmarks when no
//! local copy is available. Every generator hides a planted model whose
//! signal spans the features of both parties under an even split.

use rand::Rng;

use super::{CatField, Dataset, SparseRow};
use crate::party::{derive_rng, PartyRng};

/// Category counts of the one-hot fields of an adult-census style table.
const A9A_FIELDS: [usize; 14] = [5, 7, 16, 7, 15, 6, 5, 2, 5, 5, 2, 3, 42, 3];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Skewed categorical draw: category `k` with weight `1 / (k + 1)`.
fn skewed(rng: &mut PartyRng, n: usize) -> usize {
    let total: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
    let mut u = rng.gen_range(0.0..total);
    for k in 0..n {
        u -= 1.0 / (k + 1) as f64;
        if u <= 0.0 {
            return k;
        }
    }
    n - 1
}

/// 123 binary features in 14 one-hot fields (exactly 14 non-zeros per
/// row), about a quarter positives.
pub fn a9a_like(n: usize, seed: u64) -> Dataset {
    let cols: usize = A9A_FIELDS.iter().sum();
    let mut rng = derive_rng(seed, "synth/a9a/model");
    let mut w: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let mut base = 0;
    for &size in &A9A_FIELDS {
        let field = &mut w[base..base + size];
        let mean = field.iter().sum::<f64>() / size as f64;
        field.iter_mut().for_each(|v| *v -= mean);
        base += size;
    }
    let mut rng = derive_rng(seed, "synth/a9a/rows");
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row: SparseRow = Vec::with_capacity(A9A_FIELDS.len());
        let mut base = 0;
        for &size in &A9A_FIELDS {
            row.push((base + skewed(&mut rng, size), 1.0));
            base += size;
        }
        let logit: f64 = row.iter().map(|&(c, _)| w[c]).sum::<f64>() - 1.5;
        labels.push(usize::from(rng.gen_bool(sigmoid(logit))));
        rows.push(row);
    }
    Dataset { cols, rows, labels, classes: 2, cat: Vec::new() }
}

/// 300 sparse binary features, about 12 non-zeros per row. The planted
/// model puts most of its weight on the first half of the columns, which
/// the even split hands to A.
pub fn w8a_like(n: usize, seed: u64) -> Dataset {
    let cols = 300;
    let mut rng = derive_rng(seed, "synth/w8a/model");
    let freq: Vec<f64> = (0..cols).map(|_| rng.gen_range(0.005..0.075)).collect();
    let w: Vec<f64> = (0..cols)
        .map(|j| if j < cols / 2 { rng.gen_range(-2.5..2.5) } else { rng.gen_range(-0.5..0.5) })
        .collect();
    let mut rng = derive_rng(seed, "synth/w8a/rows");
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let row: SparseRow = (0..cols).filter(|&j| rng.gen_bool(freq[j])).map(|j| (j, 1.0)).collect();
        let logit: f64 = 2.0 * row.iter().map(|&(c, _)| w[c]).sum::<f64>() - 1.0;
        labels.push(usize::from(rng.gen_bool(sigmoid(logit))));
        rows.push(row);
    }
    Dataset { cols, rows, labels, classes: 2, cat: Vec::new() }
}

/// Binary task with one categorical field per party plus `numeric` sparse
/// numeric columns. Each category carries a planted effect.
pub fn categorical(n: usize, vocab_a: usize, vocab_b: usize, numeric: usize, seed: u64) -> Dataset {
    let mut rng = derive_rng(seed, "synth/cat/model");
    let ea: Vec<f64> = (0..vocab_a).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let eb: Vec<f64> = (0..vocab_b).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let w: Vec<f64> = (0..numeric).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut rng = derive_rng(seed, "synth/cat/rows");
    let (mut rows, mut labels) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut ca, mut cb) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let (a, b) = (rng.gen_range(0..vocab_a), rng.gen_range(0..vocab_b));
        let mut row: SparseRow = Vec::new();
        for j in 0..numeric {
            if rng.gen_bool(0.3) {
                row.push((j, (rng.gen_range(0.0..1.0f64) * 100.0).round() / 100.0));
            }
        }
        let logit = ea[a] + eb[b] + row.iter().map(|&(c, v)| w[c] * v).sum::<f64>();
        labels.push(usize::from(rng.gen_bool(sigmoid(2.0 * logit))));
        rows.push(row);
        ca.push(a);
        cb.push(b);
    }
    let cat = vec![
        CatField { name: "cat_a".into(), vocab: vocab_a, values: ca },
        CatField { name: "cat_b".into(), vocab: vocab_b, values: cb },
    ];
    Dataset { cols: numeric, rows, labels, classes: 2, cat }
}

/// `classes`-way task: each class has a centroid in `[0, 1]^cols`, rows
/// are noisy centroids rounded to two decimals with small values dropped.
pub fn multiclass(n: usize, cols: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = derive_rng(seed, "synth/multi/model");
    let centroids: Vec<Vec<f64>> =
        (0..classes).map(|_| (0..cols).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let mut rng = derive_rng(seed, "synth/multi/rows");
    let (mut rows, mut labels) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let k = rng.gen_range(0..classes);
        let row: SparseRow = centroids[k]
            .iter()
            .enumerate()
            .map(|(j, &c)| (j, ((c + rng.gen_range(-0.4..0.4f64)).clamp(0.0, 1.0) * 100.0).round() / 100.0))
            .filter(|&(_, v)| v >= 0.2)
            .collect();
        rows.push(row);
        labels.push(k);
    }
    Dataset { cols, rows, labels, classes, cat: Vec::new() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a9a_shape() {
        let ds = a9a_like(500, 1);
        assert_eq!(ds.cols, 123);
        assert_eq!(ds.avg_nnz(), 14.0);
        let pos = ds.labels.iter().sum::<usize>() as f64 / 500.0;
        assert!((0.1..0.5).contains(&pos), "{pos}");
    }

    #[test]
    fn w8a_shape() {
        let ds = w8a_like(1000, 2);
        assert_eq!(ds.cols, 300);
        assert!((9.0..15.0).contains(&ds.avg_nnz()), "{}", ds.avg_nnz());
    }

    #[test]
    fn deterministic() {
        assert_eq!(categorical(50, 7, 5, 4, 3), categorical(50, 7, 5, 4, 3));
        assert_ne!(multiclass(50, 6, 3, 3), multiclass(50, 6, 3, 4));
    }
}
