//! Label-leakage probes. Each turns the artifacts of a run into a
//! [`ProbeReport`] with a fixed verdict threshold.

use ndarray::Array2;
use num_bigint::Sign;
use rand::Rng;

use crate::data::{PartyView, SparseRow};
use crate::error::{Error, Result};
use crate::party::SeedSource;
use crate::tensor::FxTensor;
use crate::train::oracle::sparse_dot;
use crate::train::{metrics, oracle_train, ModelKind, ModelSpec, OracleOptions, TrainConfig};
use crate::transport::{scan_transcript, PrivacyPolicy, Quantity, Transcript};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    AtLeast(f64),
    Within(f64, f64),
    AtMost(f64),
}

impl Threshold {
    pub fn holds(self, v: f64) -> bool {
        match self {
            Threshold::AtLeast(t) => v >= t,
            Threshold::Within(lo, hi) => (lo..=hi).contains(&v),
            Threshold::AtMost(t) => v <= t,
        }
    }

    pub fn describe(self) -> String {
        match self {
            Threshold::AtLeast(t) => format!(">= {t}"),
            Threshold::Within(lo, hi) => format!("in [{lo}, {hi}]"),
            Threshold::AtMost(t) => format!("<= {t}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub probe: String,
    pub metric: String,
    pub value: f64,
    pub threshold: Threshold,
    pub pass: bool,
    pub details: Vec<(String, f64)>,
}

impl ProbeReport {
    fn new(probe: &str, metric: &str, value: f64, threshold: Threshold) -> ProbeReport {
        ProbeReport {
            probe: probe.into(),
            metric: metric.into(),
            value,
            threshold,
            pass: threshold.holds(value),
            details: Vec::new(),
        }
    }

    fn detail(mut self, k: &str, v: f64) -> ProbeReport {
        self.details.push((k.into(), v));
        self
    }
}

fn labels_of(view: &PartyView) -> Result<&[usize]> {
    view.labels.as_deref().ok_or_else(|| Error::Config("probe needs the labels".into()))
}

/// AUC of ranking instances by the first column of `X w`.
pub fn activation_auc(x: &[SparseRow], w: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if w.nrows() == 0 || w.ncols() == 0 {
        return Err(Error::Config("empty weights".into()));
    }
    let rows: Vec<&SparseRow> = x.iter().collect();
    let scores: Vec<f64> = sparse_dot(&rows, w).column(0).to_vec();
    metrics::auc(&scores, labels)
}

fn piece_to_array(t: &FxTensor) -> Array2<f64> {
    Array2::from_shape_vec(t.shape(), t.to_f64()).expect("shape matches")
}

/// Ranking by `X_A U_A` with A's own weight piece of a federated layer.
/// A single piece is a random projection of label-correlated features and
/// lands anywhere near 0.5, so the verdict is on the mean AUC over pieces
/// from independent seed pairs.
pub fn probe_forward_blindfl(a: &PartyView, pieces: &[FxTensor], labels: &[usize]) -> Result<ProbeReport> {
    if pieces.is_empty() {
        return Err(Error::Config("no weight pieces".into()));
    }
    let aucs = pieces.iter().map(|u| activation_auc(&a.rows, &piece_to_array(u), labels)).collect::<Result<Vec<_>>>()?;
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    Ok(ProbeReport::new("forward.blindfl", "mean_auc", mean, Threshold::Within(0.45, 0.55))
        .detail("pieces", aucs.len() as f64)
        .detail("min_auc", aucs.iter().copied().fold(f64::INFINITY, f64::min))
        .detail("max_auc", aucs.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
}

/// Ranking by `X_A W_A` with A's plaintext bottom model.
pub fn probe_forward_baseline(a: &PartyView, w_a: &Array2<f64>, labels: &[usize]) -> Result<ProbeReport> {
    let auc = activation_auc(&a.rows, w_a, labels)?;
    Ok(ProbeReport::new("forward.split_learning", "auc", auc, Threshold::AtLeast(0.8)))
}

/// The weights are shared once at init (`W_A = U_A + V_A`, `V_A` drawn
/// with half-width `amplify / sqrt(fan_in)` and held by B) but A applies
/// the plaintext `grad W_A` to `U_A` every step. A knows `U_A` at init, so
/// it ranks by `X_A (U_A,t - U_A,0)`. The ranking by the raw `X_A U_A,t`
/// is reported alongside.
pub fn probe_forward_ablation(
    train: (&PartyView, &PartyView),
    cfg: &TrainConfig,
    seeds: (SeedSource, SeedSource),
    amplify: f64,
) -> Result<ProbeReport> {
    let spec = ModelSpec::for_views(ModelKind::Lr, train.0, train.1)?;
    let run = oracle_train(&spec, cfg, seeds.0, seeds.1, train, train, OracleOptions::default())?;
    let fx = crate::fixed::FixedConfig::default();
    let (w0, _) = spec.wide_config(cfg.momentum).replay_init(seeds.0, seeds.1, &fx)?;
    let w0 = piece_to_array(&w0);
    let h = amplify / ((spec.in_a + spec.in_b) as f64).sqrt();
    let mut rng = seeds.1.rng("ablation/V_A");
    let v_a = Array2::from_shape_fn(w0.dim(), |_| rng.gen_range(-h..=h));
    let (u0, ut) = (&w0 - &v_a, &run.wide[0] - &v_a);
    let labels = labels_of(train.1)?;
    let delta = activation_auc(&train.0.rows, &(&ut - &u0), labels)?;
    let raw = activation_auc(&train.0.rows, &ut, labels)?;
    Ok(ProbeReport::new("forward.modelss_without_gradss", "auc", delta, Threshold::AtLeast(0.75))
        .detail("amplify", amplify)
        .detail("auc_raw_piece", raw))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Clusters per-instance derivatives by the sign of their cosine with the
/// first one and scores the split against the labels: an instance counts
/// as recovered when "same sign as the reference" equals "same label as
/// the reference".
pub fn probe_derivative(stream: &[(usize, Vec<f64>)], labels: &[usize]) -> Result<ProbeReport> {
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Config("derivative probe needs a binary task".into()));
    }
    let (ref_i, ref_g) = stream.first().ok_or_else(|| Error::Config("empty derivative stream".into()))?;
    let hits = stream
        .iter()
        .filter(|(i, g)| (cosine(g, ref_g) > 0.0) == (labels[*i] == labels[*ref_i]))
        .count();
    let rate = hits as f64 / stream.len() as f64;
    Ok(ProbeReport::new("derivative.split_learning", "label_recovery", rate, Threshold::AtLeast(0.99))
        .detail("instances", stream.len() as f64))
}

/// The derivative probe has nothing to read in a federated run; instead
/// count messages A received that carry a forbidden gradient in the clear.
pub fn probe_derivative_blindfl(a: &Transcript, truth: &[Quantity], scales: &[u32]) -> ProbeReport {
    let policy = PrivacyPolicy::embed_matmul();
    let hits = scan_transcript(a, &policy, truth, scales).len();
    ProbeReport::new("derivative.blindfl", "plaintext_grad_messages", hits as f64, Threshold::AtMost(0.0))
        .detail("messages_scanned", a.received().count() as f64)
}

/// Per-coordinate gap between a weight piece and the logical weight, and
/// how often their signs agree. Signs agree about half the time when the
/// piece is dominated by its mask; a piece equal to the weight is flagged.
pub fn probe_model_shares(piece: &FxTensor, logical: &FxTensor) -> Result<ProbeReport> {
    if piece.shape() != logical.shape() || piece.scale() != logical.scale() {
        return Err(Error::Shape("piece and logical weights differ in shape or scale".into()));
    }
    let (p, w) = (piece.raw(), logical.raw());
    let n = p.len();
    if n == 0 {
        return Err(Error::Config("no coordinates".into()));
    }
    let mut agree = 0usize;
    let mut gap_bits = Vec::with_capacity(n);
    for (a, b) in p.iter().zip(&w) {
        let s = |v: &num_bigint::BigInt| v.sign() != Sign::Minus;
        agree += usize::from(s(a) == s(b));
        gap_bits.push((a - b).bits() as f64);
    }
    let rate = agree as f64 / n as f64;
    let mean_gap = gap_bits.iter().sum::<f64>() / n as f64;
    let min_gap = gap_bits.iter().copied().fold(f64::INFINITY, f64::min);
    let degenerate = gap_bits.iter().all(|&g| g == 0.0);
    let mut r = ProbeReport::new("shares", "sign_agreement", rate, Threshold::Within(0.4, 0.6))
        .detail("coordinates", n as f64)
        .detail("mean_gap_bits", mean_gap)
        .detail("min_gap_bits", min_gap)
        .detail("degenerate", f64::from(u8::from(degenerate)));
    if degenerate {
        r.pass = false;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::FixedConfig;
    use crate::party::derive_rng;
    use crate::shares::mask_tensor;

    #[test]
    fn cosine_sign_clustering() {
        let labels = [1, 0, 1, 0];
        let stream = vec![(0, vec![1.0, 0.2]), (1, vec![-1.0, 0.1]), (2, vec![0.5, 0.5]), (3, vec![-0.2, -0.9])];
        let r = probe_derivative(&stream, &labels).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(probe_derivative(&stream, &[0, 1, 2, 0]).is_err());
    }

    #[test]
    fn shares_probe_on_masked_and_unmasked_pieces() {
        let c = FixedConfig::default();
        let mut rng = derive_rng(3, "p");
        let w = mask_tensor(&c, 40, 30, 40, 45, &mut rng);
        let narrow = mask_tensor(&c, 40, 30, 40, 60, &mut rng);
        let wide = mask_tensor(&c, 40, 30, 40, 120, &mut rng);
        let r = probe_model_shares(&w.sub(&wide).unwrap(), &w).unwrap();
        assert!(r.pass, "{r:?}");
        let rn = probe_model_shares(&w.sub(&narrow).unwrap(), &w).unwrap();
        assert!(r.details[1].1 > rn.details[1].1);
        let same = probe_model_shares(&w, &w).unwrap();
        assert!(!same.pass && same.details[3].1 == 1.0);
    }
}
