//! Plaintext float trainer on collocated features. It replays both
//! parties' initializer streams, so its trajectory is the one federated
//! training would follow without fixed-point effects.

use ndarray::Array2;

use super::{score, EpochRecord, History, MetricKind, ModelSpec, TopModel, TrainConfig};
use crate::data::{PartyView, SparseRow};
use crate::error::{Error, Result};
use crate::fixed::FixedConfig;
use crate::party::SeedSource;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct OracleOptions {
    /// Quantize what crosses the fixed-point boundary the way federated
    /// training does: features and `lr * dL/dZ` to `F` fractional bits,
    /// and the momentum coefficient to its `F`-bit encoding.
    pub match_fixed_point: bool,
    /// Drop A's features and embedding (B trains alone).
    pub party_b_only: bool,
}

/// Final state and history of an oracle run.
#[derive(Clone, Debug)]
pub struct OracleRun {
    pub history: History,
    /// `[W_A, W_B]` of the MatMul layer.
    pub wide: [Array2<f64>; 2],
    /// `[Q_A, W_A, Q_B, W_B]` of the Embed-MatMul layer.
    pub deep: Option<[Array2<f64>; 4]>,
    pub top: TopModel,
}

/// `X W` for sparse rows.
pub fn sparse_dot(x: &[&SparseRow], w: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.len(), w.ncols()));
    for (i, row) in x.iter().enumerate() {
        for &(c, v) in row.iter() {
            out.row_mut(i).scaled_add(v, &w.row(c));
        }
    }
    out
}

/// `X^T G` for sparse rows with `cols` columns.
pub fn sparse_t_dot(x: &[&SparseRow], g: &Array2<f64>, cols: usize) -> Array2<f64> {
    let mut out = Array2::zeros((cols, g.ncols()));
    for (i, row) in x.iter().enumerate() {
        for &(c, v) in row.iter() {
            out.row_mut(c).scaled_add(v, &g.row(i));
        }
    }
    out
}

fn lookup(q: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), q.ncols()), |(i, j)| q[[idx[i], j]])
}

fn scatter(d: &Array2<f64>, idx: &[usize], vocab: usize) -> Array2<f64> {
    let mut out = Array2::zeros((vocab, d.ncols()));
    for (i, &k) in idx.iter().enumerate() {
        out.row_mut(k).scaled_add(1.0, &d.row(i));
    }
    out
}

fn to_array(t: &crate::tensor::FxTensor) -> Array2<f64> {
    super::federated::to_array(t)
}

struct Params {
    /// `[W_A, W_B]` then, for wdl, `[Q_A, W_A, Q_B, W_B]`.
    tensors: Vec<Array2<f64>>,
    velocity: Vec<Array2<f64>>,
}

struct Oracle {
    opts: OracleOptions,
    fx: FixedConfig,
    beta: f64,
}

impl Oracle {
    fn quantize(&self, v: f64) -> f64 {
        if self.opts.match_fixed_point {
            let s = (1u64 << self.fx.frac_bits) as f64;
            (v * s).round() / s
        } else {
            v
        }
    }

    fn view_rows(&self, view: &PartyView) -> Vec<SparseRow> {
        view.rows.iter().map(|r| r.iter().map(|&(c, v)| (c, self.quantize(v))).collect()).collect()
    }

    fn z(&self, p: &Params, xa: &[&SparseRow], xb: &[&SparseRow], ia: &[usize], ib: &[usize]) -> Array2<f64> {
        let mut z = sparse_dot(xb, &p.tensors[1]);
        if !self.opts.party_b_only {
            z += &sparse_dot(xa, &p.tensors[0]);
        }
        if p.tensors.len() == 6 {
            z += &lookup(&p.tensors[4], ib).dot(&p.tensors[5]);
            if !self.opts.party_b_only {
                z += &lookup(&p.tensors[2], ia).dot(&p.tensors[3]);
            }
        }
        z
    }
}

fn cat_values(view: &PartyView) -> &[usize] {
    view.cat.as_ref().map(|c| c.values.as_slice()).unwrap_or(&[])
}

/// Float training on `(A's view, B's view)` pairs with the initial weights
/// both parties' seeds would produce.
pub fn oracle_train(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed_a: SeedSource,
    seed_b: SeedSource,
    train: (&PartyView, &PartyView),
    test: (&PartyView, &PartyView),
    opts: OracleOptions,
) -> Result<OracleRun> {
    cfg.validate()?;
    spec.validate()?;
    for (a, b) in [train, test] {
        spec.check_view(a, spec.in_a)?;
        spec.check_view(b, spec.in_b)?;
        if a.len() != b.len() || b.labels.is_none() {
            return Err(Error::Config("oracle needs aligned views with labels at B".into()));
        }
    }
    let fx = FixedConfig::default();
    let beta = if opts.match_fixed_point {
        let s = (1u64 << fx.frac_bits) as f64;
        (cfg.momentum * s).round() / s
    } else {
        cfg.momentum
    };
    let o = Oracle { opts, fx, beta };
    let (wa, wb) = spec.wide_config(cfg.momentum).replay_init(seed_a, seed_b, &fx)?;
    let mut tensors = vec![to_array(&wa), to_array(&wb)];
    if let Some(dc) = spec.deep_config(cfg.momentum) {
        tensors.extend(dc.replay_init(seed_a, seed_b, &fx)?.iter().map(to_array));
    }
    let velocity = tensors.iter().map(|t| Array2::zeros(t.dim())).collect();
    let mut p = Params { tensors, velocity };
    let mut top = TopModel::new(spec.top_spec(), &mut seed_b.rng("init/top"))?;

    let (tr_a, tr_b) = (o.view_rows(train.0), o.view_rows(train.1));
    let (te_a, te_b) = (o.view_rows(test.0), o.view_rows(test.1));
    let labels = train.1.labels.as_ref().expect("checked");
    let test_labels = test.1.labels.as_ref().expect("checked");
    let metric = MetricKind::for_classes(spec.classes);
    let mut history = History::new(metric);

    let evaluate = |p: &Params, top: &TopModel| -> Result<f64> {
        let mut probs = Vec::new();
        let order: Vec<usize> = (0..te_b.len()).collect();
        for rows in order.chunks(cfg.batch) {
            let xa: Vec<&SparseRow> = rows.iter().map(|&i| &te_a[i]).collect();
            let xb: Vec<&SparseRow> = rows.iter().map(|&i| &te_b[i]).collect();
            let ia: Vec<usize> = rows.iter().filter_map(|&i| cat_values(test.0).get(i).copied()).collect();
            let ib: Vec<usize> = rows.iter().filter_map(|&i| cat_values(test.1).get(i).copied()).collect();
            probs.extend(top.predict(&o.z(p, &xa, &xb, &ia, &ib))?.iter());
        }
        score(metric, &probs, top.spec().outputs, test_labels)
    };

    history.epochs.push(EpochRecord { epoch: 0, train_loss: None, test_metric: evaluate(&p, &top)? });
    for epoch in 1..=cfg.epochs {
        let mut losses = Vec::new();
        for rows in cfg.batches(tr_b.len(), epoch - 1) {
            let xa: Vec<&SparseRow> = rows.iter().map(|&i| &tr_a[i]).collect();
            let xb: Vec<&SparseRow> = rows.iter().map(|&i| &tr_b[i]).collect();
            let ia: Vec<usize> = rows.iter().filter_map(|&i| cat_values(train.0).get(i).copied()).collect();
            let ib: Vec<usize> = rows.iter().filter_map(|&i| cat_values(train.1).get(i).copied()).collect();
            let y: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
            let z = o.z(&p, &xa, &xb, &ia, &ib);
            let st = top.step(&z, &y, cfg.lr, cfg.momentum)?;
            losses.push(st.loss);
            let g = st.grad_z.mapv(|v| o.quantize(v * cfg.lr));
            let mut grads = vec![sparse_t_dot(&xa, &g, spec.in_a), sparse_t_dot(&xb, &g, spec.in_b)];
            if p.tensors.len() == 6 {
                for (q, w, idx, vocab) in [(2, 3, &ia, spec.vocab_a), (4, 5, &ib, spec.vocab_b)] {
                    let e = lookup(&p.tensors[q], idx);
                    grads.push(scatter(&g.dot(&p.tensors[w].t()), idx, vocab));
                    grads.push(e.t().dot(&g));
                }
            }
            for (k, d) in grads.into_iter().enumerate() {
                if o.opts.party_b_only && matches!(k, 0 | 2 | 3) {
                    continue;
                }
                p.velocity[k] = &p.velocity[k] * o.beta + &d;
                p.tensors[k] -= &p.velocity[k];
            }
        }
        let mean = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        history.iter_losses.extend(&losses);
        history.epochs.push(EpochRecord { epoch, train_loss: Some(mean), test_metric: evaluate(&p, &top)? });
    }
    let mut t = p.tensors.into_iter();
    let wide = [t.next().expect("W_A"), t.next().expect("W_B")];
    let deep = (spec.deep_config(0.0).is_some()).then(|| {
        [t.next().expect("Q_A"), t.next().expect("W_A"), t.next().expect("Q_B"), t.next().expect("W_B")]
    });
    Ok(OracleRun { history, wide, deep, top })
}
