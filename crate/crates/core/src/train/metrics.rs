use crate::error::{Error, Result};

/// Rank-based (Mann-Whitney) AUC for labels in `{0, 1}`; tied scores share
/// their average rank.
pub fn auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Config("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Config("AUC needs binary labels".into()));
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Config("AUC is undefined for a single class".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].partial_cmp(&scores[j]).expect("no NaN"));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    Ok(preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / preds.len() as f64)
}

/// Index of the largest entry of each row of a row-major matrix.
pub fn argmax_rows(probs: &[f64], cols: usize) -> Vec<usize> {
    probs
        .chunks(cols)
        .map(|r| r.iter().enumerate().fold(0, |best, (k, &v)| if v > r[best] { k } else { best }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_reversed_and_tied() {
        let labels = [0, 0, 1, 1];
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 0.0);
        assert_eq!(auc(&[0.5; 4], &labels).unwrap(), 0.5);
        // one positive tied with one negative: 3 wins + 1 half out of 4
        assert_eq!(auc(&[0.1, 0.5, 0.5, 0.9], &labels).unwrap(), 0.875);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn accuracy_and_argmax() {
        assert_eq!(argmax_rows(&[0.1, 0.7, 0.2, 0.5, 0.3, 0.2], 3), vec![1, 0]);
        assert_eq!(accuracy(&[1, 0, 2], &[1, 1, 2]).unwrap(), 2.0 / 3.0);
    }
}
