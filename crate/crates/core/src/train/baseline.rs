//! Split learning with plaintext bottom models: A computes its bottom
//! activation in the clear, sends it to B and receives its gradient back.
//! This is the insecure design the leakage probes attack; it exists to
//! produce the exposed streams, never to train anything that matters.

use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::oracle::{sparse_dot, sparse_t_dot};
use super::{score, EpochRecord, History, MetricKind, TopModel, TopSpec, TrainConfig};
use crate::data::{PartyView, SparseRow};
use crate::error::{Error, Result};
use crate::tensor::FxTensor;
use crate::transport::ProtocolSession;

use super::federated::to_array;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bottom {
    /// `X W`, one output; B sums both activations into an LR head.
    Linear,
    /// Lookup of the party's categorical field; B concatenates both
    /// embeddings into a dense top network.
    Embed { dim: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitConfig {
    pub bottom: Bottom,
    /// Hidden layers of the top network over embeddings.
    pub top_layers: usize,
    pub top_width: usize,
    /// Initial bias of the top network's hidden layers.
    pub hidden_bias: f64,
    pub train: TrainConfig,
}

impl SplitConfig {
    pub fn linear(train: TrainConfig) -> SplitConfig {
        SplitConfig { bottom: Bottom::Linear, top_layers: 0, top_width: 64, hidden_bias: 0.0, train }
    }

    pub fn embed(dim: usize, top_layers: usize, train: TrainConfig) -> SplitConfig {
        SplitConfig { bottom: Bottom::Embed { dim }, top_layers, top_width: 64, hidden_bias: 0.0, train }
    }
}

/// One party's result of a split-learning run.
#[derive(Clone, Debug)]
pub struct SplitOutcome {
    /// This party's bottom weights (`W` or the embedding table).
    pub bottom: Array2<f64>,
    /// B only.
    pub history: Option<History>,
    /// A only: `(instance, dL/dH_A row)` for every training instance, one
    /// list per epoch.
    pub grad_stream: Vec<Vec<(usize, Vec<f64>)>>,
    /// A only: the first activation sent and the first gradient received,
    /// exactly as they crossed the wire.
    pub first_exchange: Option<(FxTensor, FxTensor)>,
}

/// Scale of the plaintext tensors on the wire.
fn wire_scale(s: &ProtocolSession) -> u32 {
    2 * s.fixed().frac_bits
}

struct BottomModel {
    w: Array2<f64>,
    v: Array2<f64>,
}

impl BottomModel {
    fn forward(&self, kind: Bottom, view: &PartyView, rows: &[usize]) -> Array2<f64> {
        match kind {
            Bottom::Linear => {
                let x: Vec<&SparseRow> = rows.iter().map(|&i| &view.rows[i]).collect();
                sparse_dot(&x, &self.w)
            }
            Bottom::Embed { .. } => {
                let cat = &view.cat.as_ref().expect("checked").values;
                Array2::from_shape_fn((rows.len(), self.w.ncols()), |(i, j)| self.w[[cat[rows[i]], j]])
            }
        }
    }

    fn update(&mut self, kind: Bottom, view: &PartyView, rows: &[usize], d: &Array2<f64>, cfg: &TrainConfig) {
        let g = match kind {
            Bottom::Linear => {
                let x: Vec<&SparseRow> = rows.iter().map(|&i| &view.rows[i]).collect();
                sparse_t_dot(&x, d, self.w.nrows())
            }
            Bottom::Embed { .. } => {
                let cat = &view.cat.as_ref().expect("checked").values;
                let mut g = Array2::zeros(self.w.dim());
                for (i, &r) in rows.iter().enumerate() {
                    g.row_mut(cat[r]).scaled_add(1.0, &d.row(i));
                }
                g
            }
        };
        self.v = &self.v * cfg.momentum + &(g * cfg.lr);
        self.w -= &self.v;
    }
}

fn send_plain(s: &mut ProtocolSession, tag: &str, h: &Array2<f64>) -> Result<FxTensor> {
    let fx = *s.fixed();
    let flat: Vec<f64> = h.iter().copied().collect();
    let t = FxTensor::from_f64(h.nrows(), h.ncols(), &flat, wire_scale(s), &fx)?;
    s.send_blinded(tag, &t)?;
    Ok(t)
}

fn recv_plain(s: &mut ProtocolSession, tag: &str) -> Result<(FxTensor, Array2<f64>)> {
    let t = s.recv_blinded(tag)?;
    let a = to_array(&t);
    Ok((t, a))
}

/// Trains a split-learning model; both parties call this concurrently.
pub fn split_party(s: &mut ProtocolSession, cfg: &SplitConfig, train: &PartyView, test: &PartyView) -> Result<SplitOutcome> {
    cfg.train.validate()?;
    let is_b = s.me().is_b();
    let (rows, cols) = match cfg.bottom {
        Bottom::Linear => (train.cols, 1),
        Bottom::Embed { dim } => {
            let cat = train.cat.as_ref().ok_or_else(|| Error::Config("embedding bottom needs a categorical field".into()))?;
            if test.cat.is_none() {
                return Err(Error::Config("test view lacks the categorical field".into()));
            }
            (cat.vocab, dim)
        }
    };
    // each bottom is scaled by its own fan-in
    let h = 1.0 / (rows.max(1) as f64).sqrt();
    let mut rng = s.derived_rng("sl/bottom");
    let w = Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-h..=h));
    let mut bottom = BottomModel { v: Array2::zeros(w.dim()), w };
    let mut top = if is_b {
        let spec = match cfg.bottom {
            Bottom::Linear => TopSpec::lr(),
            Bottom::Embed { dim } => TopSpec::deep(2 * dim, cfg.top_layers, cfg.top_width, train.classes),
        };
        if train.labels.is_none() || test.labels.is_none() {
            return Err(Error::Config("B's views must carry labels".into()));
        }
        Some(TopModel::new(spec, &mut s.derived_rng("sl/top"))?.with_hidden_bias(cfg.hidden_bias))
    } else {
        None
    };
    let combine = |ha: &Array2<f64>, hb: &Array2<f64>| -> Result<Array2<f64>> {
        if ha.nrows() != hb.nrows() {
            return Err(Error::Shape(format!("peer batch {} vs {}", ha.nrows(), hb.nrows())));
        }
        Ok(match cfg.bottom {
            Bottom::Linear => ha + hb,
            Bottom::Embed { .. } => ndarray::concatenate(Axis(1), &[ha.view(), hb.view()]).expect("equal rows"),
        })
    };

    let mut out = SplitOutcome { bottom: Array2::zeros((0, 0)), history: None, grad_stream: Vec::new(), first_exchange: None };
    let metric = MetricKind::for_classes(train.classes);
    let mut history = History::new(metric);
    let eval = |s: &mut ProtocolSession, bottom: &BottomModel, top: &Option<TopModel>| -> Result<Option<f64>> {
        let order: Vec<usize> = (0..test.len()).collect();
        let mut probs = Vec::new();
        for batch in order.chunks(cfg.train.batch) {
            let hm = bottom.forward(cfg.bottom, test, batch);
            match top {
                None => {
                    send_plain(s, "sl.eval.h", &hm)?;
                }
                Some(top) => {
                    let (_, ha) = recv_plain(s, "sl.eval.h")?;
                    probs.extend(top.predict(&combine(&ha, &hm)?)?.iter());
                }
            }
        }
        match top {
            None => Ok(None),
            Some(top) => Ok(Some(score(metric, &probs, top.spec().outputs, test.labels.as_ref().expect("checked"))?)),
        }
    };
    let m0 = eval(s, &bottom, &top)?;
    let mut epochs = vec![EpochRecord { epoch: 0, train_loss: None, test_metric: m0.unwrap_or(f64::NAN) }];
    for epoch in 1..=cfg.train.epochs {
        let mut losses = Vec::new();
        let mut stream = Vec::new();
        for batch in cfg.train.batches(train.len(), epoch - 1) {
            let hm = bottom.forward(cfg.bottom, train, &batch);
            match &mut top {
                None => {
                    let sent = send_plain(s, "sl.fw.h", &hm)?;
                    let (got, d) = recv_plain(s, "sl.bw.grad")?;
                    if out.first_exchange.is_none() {
                        out.first_exchange = Some((sent, got));
                    }
                    stream.extend(batch.iter().zip(d.rows()).map(|(&i, r)| (i, r.to_vec())));
                    bottom.update(cfg.bottom, train, &batch, &d, &cfg.train);
                }
                Some(top) => {
                    let (_, ha) = recv_plain(s, "sl.fw.h")?;
                    let labels = train.labels.as_ref().expect("checked");
                    let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                    let st = top.step(&combine(&ha, &hm)?, &y, cfg.train.lr, cfg.train.momentum)?;
                    losses.push(st.loss);
                    let (da, db) = match cfg.bottom {
                        Bottom::Linear => (st.grad_z.clone(), st.grad_z),
                        Bottom::Embed { dim } => (st.grad_z.slice(s![.., ..dim]).to_owned(), st.grad_z.slice(s![.., dim..]).to_owned()),
                    };
                    send_plain(s, "sl.bw.grad", &da)?;
                    bottom.update(cfg.bottom, train, &batch, &db, &cfg.train);
                }
            }
        }
        if !is_b {
            out.grad_stream.push(stream);
        }
        let m = eval(s, &bottom, &top)?;
        let mean = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        history.iter_losses.extend(&losses);
        epochs.push(EpochRecord { epoch, train_loss: Some(mean), test_metric: m.unwrap_or(f64::NAN) });
    }
    if is_b {
        history.epochs = epochs;
        out.history = Some(history);
    }
    out.bottom = bottom.w;
    Ok(out)
}
