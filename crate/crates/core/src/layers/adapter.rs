//! Variants of the source layers for a secret-shared top model: forward
//! leaves `Z` as a share pair and backward consumes shares of `eta * dL/dZ`.
//! Neither party ever sees `Z` or its gradient in the clear.
//!
//! [`SsTopLinear`] is a minimal shared top model for driving the adapters:
//! public fixed weights applied share-locally, then B restores the logits,
//! applies its bias and the loss, and re-shares the logit gradient.

use crate::error::{Error, Result};
use crate::fixed::FixedConfig;
use crate::shares::share_send;
use crate::tensor::FxTensor;
use crate::transport::ProtocolSession;

use super::embed::{EmbedConfig, EmbedMatMulLayer};
use super::matmul::{MatMulConfig, MatMulLayer};

/// This party's piece of a shared activation. The two pieces sum to the
/// logical raw integers exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedActivation {
    pub piece: FxTensor,
}

impl SharedActivation {
    pub fn scale(&self) -> u32 {
        self.piece.scale()
    }
}

/// MatMul layer with shared output and shared gradient input.
#[derive(Clone, Debug)]
pub struct MatMulSsLayer {
    inner: MatMulLayer,
}

impl MatMulSsLayer {
    pub fn init(s: &mut ProtocolSession, cfg: MatMulConfig) -> Result<MatMulSsLayer> {
        Ok(MatMulSsLayer { inner: MatMulLayer::init_tagged(s, cfg, "mmss")? })
    }

    /// Pieces at scale `3F`.
    pub fn forward(&mut self, s: &mut ProtocolSession, x: &FxTensor) -> Result<SharedActivation> {
        Ok(SharedActivation { piece: self.inner.forward_shared(s, x)? })
    }

    /// `g_piece` is this party's share of `eta * dL/dZ` at scale `F`.
    pub fn backward(&mut self, s: &mut ProtocolSession, g_piece: &FxTensor) -> Result<()> {
        self.inner.backward_shared(s, g_piece)
    }

    pub fn layer(&self) -> &MatMulLayer {
        &self.inner
    }
}

/// Embed-MatMul layer with shared output and shared gradient input.
#[derive(Clone, Debug)]
pub struct EmbedMatMulSsLayer {
    inner: EmbedMatMulLayer,
}

impl EmbedMatMulSsLayer {
    pub fn init(s: &mut ProtocolSession, cfg: EmbedConfig) -> Result<EmbedMatMulSsLayer> {
        Ok(EmbedMatMulSsLayer { inner: EmbedMatMulLayer::init_tagged(s, cfg, "emss")? })
    }

    /// Pieces at scale `4F`.
    pub fn forward(&mut self, s: &mut ProtocolSession, idx: &[usize]) -> Result<SharedActivation> {
        Ok(SharedActivation { piece: self.inner.forward_shared(s, idx)? })
    }

    pub fn backward(&mut self, s: &mut ProtocolSession, g_piece: &FxTensor) -> Result<()> {
        self.inner.backward_shared(s, g_piece)
    }

    pub fn layer(&self) -> &EmbedMatMulLayer {
        &self.inner
    }
}

/// Shared top model: `logits = Z W + b` with public `W` (encoded at `F`)
/// and a bias trained at B.
#[derive(Clone, Debug)]
pub struct SsTopLinear {
    weights: FxTensor,
    pub bias: Vec<f64>,
    fx: FixedConfig,
}

impl SsTopLinear {
    /// `weights` is `in x out`, row-major.
    pub fn new(fx: &FixedConfig, inputs: usize, outputs: usize, weights: &[f64]) -> Result<SsTopLinear> {
        if weights.len() != inputs * outputs {
            return Err(Error::Shape(format!("top weights: {} values for {inputs}x{outputs}", weights.len())));
        }
        let weights = FxTensor::from_f64(inputs, outputs, weights, fx.frac_bits, fx)?;
        Ok(SsTopLinear { weights, bias: vec![0.0; outputs], fx: *fx })
    }

    pub fn weights(&self) -> &FxTensor {
        &self.weights
    }

    /// Share-local product, then A sends its logit piece to B. B gets the
    /// logits (`batch x out`, row-major, bias included); A gets `None`.
    pub fn forward(&self, s: &mut ProtocolSession, act: &SharedActivation) -> Result<Option<Vec<f64>>> {
        if act.piece.cols() != self.weights.rows() {
            return Err(Error::Shape(format!("activation has {} columns, top expects {}", act.piece.cols(), self.weights.rows())));
        }
        let local = act.piece.matmul(&self.weights)?;
        if !s.me().is_b() {
            s.send_blinded("top.fw.logits", &local)?;
            return Ok(None);
        }
        let other = s.recv_blinded("top.fw.logits")?;
        if other.shape() != local.shape() {
            return Err(Error::Shape(format!("peer logits {:?} vs {:?}", other.shape(), local.shape())));
        }
        let out = self.weights.cols();
        let logits = local.add(&other)?.to_f64();
        Ok(Some(logits.iter().enumerate().map(|(i, z)| z + self.bias[i % out]).collect()))
    }

    /// B passes `dL/dlogits` (already averaged over the batch); A passes
    /// `None`. B shares `lr * dL/dlogits`, both map their piece through
    /// `W^T` and floor by `F`. Returns this party's piece of
    /// `lr * dL/dZ` at scale `F`.
    pub fn backward(&mut self, s: &mut ProtocolSession, grad_logits: Option<&[f64]>, lr: f64) -> Result<FxTensor> {
        let f = self.fx.frac_bits;
        let out = self.weights.cols();
        let piece = if s.me().is_b() {
            let g = grad_logits.ok_or_else(|| Error::State("party B must supply the logit gradient".into()))?;
            if g.len() % out != 0 {
                return Err(Error::Shape(format!("{} logit gradients for {out} outputs", g.len())));
            }
            for (j, b) in self.bias.iter_mut().enumerate() {
                *b -= lr * g.iter().skip(j).step_by(out).sum::<f64>();
            }
            let scaled: Vec<f64> = g.iter().map(|v| v * lr).collect();
            let gt = FxTensor::from_f64(g.len() / out, out, &scaled, f, &self.fx)?;
            share_send(s, "top.bw.gshare", &gt, self.fx.vmax_bits)?
        } else {
            s.recv_blinded("top.bw.gshare")?
        };
        piece.matmul(&self.weights.transpose())?.truncate(f)
    }
}
