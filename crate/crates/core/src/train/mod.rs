//! Model composition and training: federated source layers feeding a
//! plaintext top model at B, the float reference trainer, and the
//! split-learning baseline used by the leakage probes.

pub mod baseline;
mod federated;
pub mod metrics;
pub mod oracle;
pub mod top;
pub mod truth;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::data::PartyView;
use crate::error::{Error, Result};
use crate::layers::{EmbedConfig, MatMulConfig};
use crate::party::derive_rng;

pub use federated::{train_party, PartyModel};
pub use oracle::{oracle_train, OracleOptions, OracleRun};
pub use top::{TopModel, TopSpec, TopStep};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// MatMul layer, bias and sigmoid.
    Lr,
    /// MatMul layer, bias and softmax.
    Mlr,
    /// MatMul layer as the first hidden layer of an MLP.
    Mlp,
    /// MatMul (numeric) plus Embed-MatMul (categorical), summed at B.
    Wdl,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModelKind> {
        match s {
            "lr" => Ok(ModelKind::Lr),
            "mlr" => Ok(ModelKind::Mlr),
            "mlp" => Ok(ModelKind::Mlp),
            "wdl" => Ok(ModelKind::Wdl),
            _ => Err(Error::Config(format!("unknown model `{s}`"))),
        }
    }
}

/// Everything both parties must agree on about the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub in_a: usize,
    pub in_b: usize,
    pub classes: usize,
    pub mlp_width: usize,
    pub embed_dim: usize,
    pub vocab_a: usize,
    pub vocab_b: usize,
    /// Public bound `|x| < 2^feature_bits`.
    pub feature_bits: u32,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, in_a: usize, in_b: usize, classes: usize) -> ModelSpec {
        ModelSpec { kind, in_a, in_b, classes, mlp_width: 64, embed_dim: 8, vocab_a: 0, vocab_b: 0, feature_bits: 8 }
    }

    /// Spec matching a pair of party views.
    pub fn for_views(kind: ModelKind, a: &PartyView, b: &PartyView) -> Result<ModelSpec> {
        let mut spec = ModelSpec::new(kind, a.cols, b.cols, b.classes);
        if kind == ModelKind::Wdl {
            let (ca, cb) = match (&a.cat, &b.cat) {
                (Some(ca), Some(cb)) => (ca, cb),
                _ => return Err(Error::Config("wdl needs one categorical field per party".into())),
            };
            spec.vocab_a = ca.vocab;
            spec.vocab_b = cb.vocab;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_a == 0 || self.in_b == 0 {
            return Err(Error::Config("each party needs at least one feature column".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("fewer than two classes".into()));
        }
        if self.kind == ModelKind::Lr && self.classes != 2 {
            return Err(Error::Config(format!("lr is binary, dataset has {} classes", self.classes)));
        }
        if self.kind == ModelKind::Wdl && (self.vocab_a == 0 || self.vocab_b == 0 || self.embed_dim == 0) {
            return Err(Error::Config("wdl needs vocabularies and an embedding width".into()));
        }
        Ok(())
    }

    /// Width of `Z`.
    pub fn source_out(&self) -> usize {
        match self.kind {
            ModelKind::Lr => 1,
            ModelKind::Mlr => self.classes,
            ModelKind::Mlp => self.mlp_width,
            ModelKind::Wdl => top::outputs_for(self.classes),
        }
    }

    pub fn top_spec(&self) -> TopSpec {
        match self.kind {
            ModelKind::Lr => TopSpec::lr(),
            ModelKind::Mlr => TopSpec::mlr(self.classes),
            ModelKind::Mlp => TopSpec::mlp(self.mlp_width, self.classes),
            ModelKind::Wdl if self.classes == 2 => TopSpec::lr(),
            ModelKind::Wdl => TopSpec::mlr(self.classes),
        }
    }

    pub fn wide_config(&self, momentum: f64) -> MatMulConfig {
        let mut c = MatMulConfig::new("wide", self.in_a, self.in_b, self.source_out());
        c.feature_bits = self.feature_bits;
        c.momentum = momentum;
        c
    }

    pub fn deep_config(&self, momentum: f64) -> Option<EmbedConfig> {
        (self.kind == ModelKind::Wdl).then(|| {
            let mut c = EmbedConfig::new("deep", self.vocab_a, self.vocab_b, self.embed_dim, self.source_out());
            c.momentum = momentum;
            c
        })
    }

    /// Checks that a party's data fits the spec.
    pub fn check_view(&self, view: &PartyView, cols: usize) -> Result<()> {
        if view.cols != cols {
            return Err(Error::Config(format!("party has {} feature columns, model expects {cols}", view.cols)));
        }
        let bound = (1u64 << self.feature_bits) as f64;
        if view.rows.iter().flatten().any(|&(_, v)| v.abs() >= bound) {
            return Err(Error::Config(format!("feature magnitude exceeds 2^{}", self.feature_bits)));
        }
        if self.kind == ModelKind::Wdl {
            let cat = view.cat.as_ref().ok_or_else(|| Error::Config("missing categorical field".into()))?;
            if cat.values.len() != view.len() {
                return Err(Error::Config("categorical field and features disagree on row count".into()));
            }
        }
        Ok(())
    }
}

/// Optimizer and loop settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Public seed of the per-epoch instance order; `None` keeps file order.
    pub shuffle_seed: Option<u64>,
    /// Each party writes `<party>-epoch<k>.ckpt` here after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 0.05, momentum: 0.9, batch: 128, epochs: 10, shuffle_seed: Some(0), checkpoint_dir: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("batch must be positive, lr positive and momentum in [0, 1)".into()));
        }
        Ok(())
    }

    /// Mini-batches of epoch `epoch` (0-based) over `n` instances.
    pub fn batches(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        if let Some(seed) = self.shuffle_seed {
            order.shuffle(&mut derive_rng(seed, &format!("shuffle/epoch{epoch}")));
        }
        order.chunks(self.batch).map(|c| c.to_vec()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Auc,
    Accuracy,
}

impl MetricKind {
    pub fn for_classes(classes: usize) -> MetricKind {
        if classes == 2 {
            MetricKind::Auc
        } else {
            MetricKind::Accuracy
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Auc => "auc",
            MetricKind::Accuracy => "accuracy",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean iteration loss; absent for epoch 0 (the initialized model).
    pub train_loss: Option<f64>,
    pub test_metric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub metric: MetricKind,
    pub epochs: Vec<EpochRecord>,
    pub iter_losses: Vec<f64>,
}

impl History {
    pub fn new(metric: MetricKind) -> History {
        History { metric, epochs: Vec::new(), iter_losses: Vec::new() }
    }

    pub fn final_metric(&self) -> f64 {
        self.epochs.last().map(|e| e.test_metric).unwrap_or(f64::NAN)
    }

    /// `epoch,train_loss,test_metric`, one row per epoch including epoch 0.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_metric\n");
        for e in &self.epochs {
            let loss = e.train_loss.map(|l| l.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{}", e.epoch, loss, e.test_metric).expect("string write");
        }
        out
    }
}

/// Test metric from top-model probabilities (`batch x outputs`, row-major).
pub fn score(metric: MetricKind, probs: &[f64], outputs: usize, labels: &[usize]) -> Result<f64> {
    match metric {
        MetricKind::Auc if outputs == 1 => metrics::auc(probs, labels),
        MetricKind::Auc => {
            let pos: Vec<f64> = probs.chunks(outputs).map(|r| r[1]).collect();
            metrics::auc(&pos, labels)
        }
        MetricKind::Accuracy => metrics::accuracy(&metrics::argmax_rows(probs, outputs), labels),
    }
}
