use std::path::Path;

use ndarray::Array2;

use super::{score, History, MetricKind, ModelSpec, TopModel, TrainConfig};
use crate::data::PartyView;
use crate::error::{Error, Result};
use crate::layers::{CheckpointReader, CheckpointWriter, EmbedMatMulLayer, MatMulLayer};
use crate::tensor::FxTensor;
use crate::transport::ProtocolSession;

const CHECKPOINT_MAGIC: &[u8] = b"VFLMD\x01";

/// One party's share of a federated model. The top model lives at B only.
#[derive(Clone, Debug)]
pub struct PartyModel {
    pub wide: MatMulLayer,
    pub deep: Option<EmbedMatMulLayer>,
    pub top: Option<TopModel>,
}

impl PartyModel {
    /// Runs the layer init protocols; B also draws its top model from the
    /// `init/top` stream.
    pub fn init(s: &mut ProtocolSession, spec: &ModelSpec, cfg: &TrainConfig) -> Result<PartyModel> {
        spec.validate()?;
        let wide = MatMulLayer::init(s, spec.wide_config(cfg.momentum))?;
        let deep = match spec.deep_config(cfg.momentum) {
            Some(c) => Some(EmbedMatMulLayer::init(s, c)?),
            None => None,
        };
        let top = if s.me().is_b() { Some(TopModel::new(spec.top_spec(), &mut s.derived_rng("init/top"))?) } else { None };
        Ok(PartyModel { wide, deep, top })
    }

    /// Forward over the instances `rows` of `view`. B gets `Z` in floats.
    pub fn forward(&mut self, s: &mut ProtocolSession, view: &PartyView, rows: &[usize]) -> Result<Option<Array2<f64>>> {
        let fx = *s.fixed();
        let batch: Vec<_> = rows.iter().map(|&i| view.rows[i].clone()).collect();
        let x = FxTensor::csr_from_rows(view.cols, &batch, fx.frac_bits, &fx)?;
        let mut z = self.wide.forward(s, &x)?.map(|z| to_array(&z));
        if let Some(deep) = &mut self.deep {
            let cat = view.cat.as_ref().ok_or_else(|| Error::Config("missing categorical field".into()))?;
            let idx: Vec<usize> = rows.iter().map(|&i| cat.values[i]).collect();
            if let (Some(z), Some(ze)) = (&mut z, deep.forward(s, &idx)?) {
                *z += &to_array(&ze);
            }
        }
        Ok(z)
    }

    /// `g` is `lr * dL/dZ` at scale `F`, supplied by B.
    pub fn backward(&mut self, s: &mut ProtocolSession, g: Option<&FxTensor>) -> Result<()> {
        self.wide.backward(s, g)?;
        if let Some(deep) = &mut self.deep {
            deep.backward(s, g)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Vec<u8> {
        let mut w = CheckpointWriter::new(CHECKPOINT_MAGIC);
        w.block(&self.wide.checkpoint());
        w.block(&self.deep.as_ref().map(|d| d.checkpoint()).unwrap_or_default());
        let top: Vec<u8> = self.top.iter().flat_map(|t| t.to_flat()).flat_map(f64::to_be_bytes).collect();
        w.block(&top);
        w.finish()
    }

    /// Restores into a model initialized with the same spec.
    pub fn restore_checkpoint(&mut self, bytes: &[u8]) -> Result<()> {
        let mut r = CheckpointReader::new(bytes, CHECKPOINT_MAGIC)?;
        self.wide.restore_checkpoint(r.block()?)?;
        let deep = r.block()?;
        match &mut self.deep {
            Some(d) => d.restore_checkpoint(deep)?,
            None if deep.is_empty() => {}
            None => return Err(Error::Malformed("checkpoint has an embedding layer".into())),
        }
        let top = r.block()?;
        r.done()?;
        if top.len() % 8 != 0 {
            return Err(Error::Malformed("top model block".into()));
        }
        let values: Vec<f64> = top.chunks(8).map(|c| f64::from_be_bytes(c.try_into().expect("8 bytes"))).collect();
        match &mut self.top {
            Some(t) => t.load_flat(&values),
            None if values.is_empty() => Ok(()),
            None => Err(Error::Malformed("checkpoint has a top model".into())),
        }
    }
}

pub(crate) fn to_array(t: &FxTensor) -> Array2<f64> {
    Array2::from_shape_vec(t.shape(), t.to_f64()).expect("shape matches data")
}

/// Exchanges a digest of everything both sides must agree on.
fn agree(s: &mut ProtocolSession, spec: &ModelSpec, cfg: &TrainConfig, train: usize, test: usize) -> Result<()> {
    let fp = format!("{spec:?}|{}|{}|{}|{}|{:?}|{train}|{test}", cfg.lr, cfg.momentum, cfg.batch, cfg.epochs, cfg.shuffle_seed);
    let mine = fp.into_bytes();
    let theirs = if s.me().is_b() {
        let t = s.recv_control("train.hello")?;
        s.send_control("train.hello", mine.clone())?;
        t
    } else {
        s.send_control("train.hello", mine.clone())?;
        s.recv_control("train.hello")?
    };
    if theirs != mine {
        return Err(Error::ConfigMismatch("parties disagree on model, optimizer or dataset sizes".into()));
    }
    Ok(())
}

/// Test metric of the current model; B returns it, A returns `None`.
fn evaluate(s: &mut ProtocolSession, model: &mut PartyModel, cfg: &TrainConfig, test: &PartyView) -> Result<Option<f64>> {
    let mut probs = Vec::with_capacity(test.len());
    let order: Vec<usize> = (0..test.len()).collect();
    for rows in order.chunks(cfg.batch) {
        if let Some(z) = model.forward(s, test, rows)? {
            probs.extend(model.top.as_ref().expect("B has the top model").predict(&z)?.iter());
        }
    }
    let Some(top) = &model.top else { return Ok(None) };
    let labels = test.labels.as_ref().ok_or_else(|| Error::Config("B's test view has no labels".into()))?;
    Ok(Some(score(MetricKind::for_classes(test.classes), &probs, top.spec().outputs, labels)?))
}

/// Trains `spec` on aligned datasets; both parties call this concurrently
/// with equal `spec` and `cfg`. B gets the metric history.
pub fn train_party(
    s: &mut ProtocolSession,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    train: &PartyView,
    test: &PartyView,
) -> Result<(PartyModel, Option<History>)> {
    cfg.validate()?;
    let is_b = s.me().is_b();
    let cols = if is_b { spec.in_b } else { spec.in_a };
    spec.check_view(train, cols)?;
    spec.check_view(test, cols)?;
    if is_b && (train.labels.is_none() || test.labels.is_none()) {
        return Err(Error::Config("B's views must carry labels".into()));
    }
    agree(s, spec, cfg, train.len(), test.len())?;
    let mut model = PartyModel::init(s, spec, cfg)?;
    let fx = *s.fixed();
    let mut history = History::new(MetricKind::for_classes(spec.classes));
    let record = |h: &mut History, epoch, loss, metric: Option<f64>| {
        if let Some(m) = metric {
            h.epochs.push(super::EpochRecord { epoch, train_loss: loss, test_metric: m });
        }
    };
    let m0 = evaluate(s, &mut model, cfg, test)?;
    record(&mut history, 0, None, m0);
    for epoch in 1..=cfg.epochs {
        let mut losses = Vec::new();
        for rows in cfg.batches(train.len(), epoch - 1) {
            let z = model.forward(s, train, &rows)?;
            let g = match (z, &mut model.top) {
                (Some(z), Some(top)) => {
                    let labels = train.labels.as_ref().expect("checked");
                    let y: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
                    let st = top.step(&z, &y, cfg.lr, cfg.momentum)?;
                    losses.push(st.loss);
                    let scaled: Vec<f64> = st.grad_z.iter().map(|v| v * cfg.lr).collect();
                    Some(FxTensor::from_f64(st.grad_z.nrows(), st.grad_z.ncols(), &scaled, fx.frac_bits, &fx)?)
                }
                _ => None,
            };
            model.backward(s, g.as_ref())?;
        }
        let metric = evaluate(s, &mut model, cfg, test)?;
        if is_b {
            let mean = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
            log::info!("epoch {epoch}: train_loss {mean:.5}, test {} {:.5}", history.metric.name(), metric.unwrap_or(f64::NAN));
            history.iter_losses.extend(&losses);
            record(&mut history, epoch, Some(mean), metric);
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            write_checkpoint(dir, &format!("{}-epoch{epoch}.ckpt", s.me()), &model.checkpoint())?;
        }
    }
    Ok((model, is_b.then_some(history)))
}

fn write_checkpoint(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(std::fs::write(dir.join(name), bytes)?)
}
