use proptest::prelude::*;
use vfl_core::data::{
    load_categorical_csv, load_libsvm, merge, parse_libsvm, save_libsvm, synth, vsplit, write_libsvm, Dataset, SparseRow,
    VerticalSplit,
};

fn tmp(name: &str) -> std::path::PathBuf {
    std::env::temp_dir().join(format!("vfl-data-{}-{name}", std::process::id()))
}

#[test]
fn a9a_surrogate_matches_the_published_shape() {
    let ds = synth::a9a_like(2000, 1);
    assert_eq!(ds.cols, 123);
    assert!((ds.avg_nnz() - 14.0).abs() < 0.5, "{}", ds.avg_nnz());
    let (a, b) = vsplit(&ds, &VerticalSplit::even(ds.cols)).unwrap();
    assert_eq!((a.cols, b.cols), (62, 61));
    assert!(a.labels.is_none() && b.labels.is_some());
}

#[test]
fn libsvm_file_round_trip() {
    let ds = synth::w8a_like(200, 2);
    let p = tmp("w8a.svm");
    save_libsvm(&ds, &p).unwrap();
    let back = load_libsvm(&p, Some(ds.cols)).unwrap();
    std::fs::remove_file(&p).unwrap();
    assert_eq!(back, ds);
    let multi = synth::multiclass(60, 7, 4, 3);
    assert_eq!(parse_libsvm(&write_libsvm(&multi), Some(7)).unwrap(), multi);
}

#[test]
fn empty_feature_line_is_a_zero_row() {
    let ds = parse_libsvm("1\n-1 2:0.5\n", Some(3)).unwrap();
    assert_eq!(ds.rows, vec![vec![], vec![(1, 0.5)]]);
    assert_eq!(ds.labels, vec![1, 0]);
}

#[test]
fn missing_file_and_overflow_are_errors() {
    assert!(load_libsvm(&tmp("absent"), None).is_err());
    let e = parse_libsvm("1 1:1\n1 9:1\n", Some(4)).unwrap_err();
    assert!(e.to_string().contains('2'), "{e}");
}

#[test]
fn categorical_csv_feeds_the_split() {
    let p = tmp("cat.csv");
    std::fs::write(&p, "label,cat_a,x,cat_b\n1,red,0.5,u\n0,blue,0,v\n1,red,1.5,v\n").unwrap();
    let ds = load_categorical_csv(&p).unwrap();
    std::fs::remove_file(&p).unwrap();
    assert_eq!(ds.cols, 1);
    let (a, b) = vsplit(&ds, &VerticalSplit::even(ds.cols)).unwrap();
    assert_eq!(a.cat.unwrap().values, vec![0, 1, 0]);
    assert_eq!(b.cat.unwrap().values, vec![0, 1, 1]);
}

#[test]
fn single_column_split() {
    let ds = parse_libsvm("1 1:2\n0\n", Some(1)).unwrap();
    let split = VerticalSplit::even(1);
    let (a, b) = vsplit(&ds, &split).unwrap();
    assert_eq!((a.cols, b.cols), (1, 0));
    assert_eq!(merge(&a, &b, &split).unwrap(), ds);
}

fn dataset() -> impl Strategy<Value = Dataset> {
    (2usize..20, 1usize..12).prop_flat_map(|(cols, n)| {
        let row = proptest::collection::btree_map(0..cols, -5i32..=5, 0..cols)
            .prop_map(|m| m.into_iter().filter(|&(_, v)| v != 0).map(|(c, v)| (c, f64::from(v) / 4.0)).collect::<SparseRow>());
        (proptest::collection::vec(row, n), proptest::collection::vec(0usize..2, n))
            .prop_map(move |(rows, labels)| Dataset { cols, rows, labels, classes: 2, cat: Vec::new() })
    })
}

proptest! {
    #[test]
    fn split_then_merge_is_identity(ds in dataset(), cut in 0usize..20) {
        let cut = cut.min(ds.cols);
        for split in [VerticalSplit::even(ds.cols), VerticalSplit::new(0..cut, cut..ds.cols, ds.cols).unwrap()] {
            let (a, b) = vsplit(&ds, &split).unwrap();
            prop_assert_eq!(merge(&a, &b, &split).unwrap(), ds.clone());
        }
    }

    #[test]
    fn swapped_ranges_also_merge_back(ds in dataset(), cut in 0usize..20) {
        let cut = cut.min(ds.cols);
        let split = VerticalSplit::new(cut..ds.cols, 0..cut, ds.cols).unwrap();
        let (a, b) = vsplit(&ds, &split).unwrap();
        prop_assert_eq!(merge(&a, &b, &split).unwrap(), ds);
    }
}
