//! Federated source layers. Every persistent weight is split into two
//! integer pieces held by different parties; see [`matmul`] and [`embed`].

pub mod adapter;
pub mod embed;
pub mod matmul;
pub mod multiparty;

use num_bigint::BigInt;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fixed::{self, FixedConfig};
use crate::party::{PartyId, PartyRng};
use crate::tensor::FxTensor;

pub use adapter::{EmbedMatMulSsLayer, MatMulSsLayer, SharedActivation, SsTopLinear};
pub use embed::{EmbedConfig, EmbedForwardContext, EmbedMatMulLayer};
pub use matmul::{MatMulConfig, MatMulLayer};
pub use multiparty::{MultiPartyB, MultiPartyConfig, MultiPartyMember};

/// `ceil(log2(n))` for `n >= 1`.
pub fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

/// How the logical initial weights are drawn. The logical value is always
/// the sum of one contribution drawn by the owner and one drawn by the peer
/// (or one per peer in the multi-party layer), so neither side learns it.
#[derive(Clone, Debug, PartialEq)]
pub enum Initializer {
    Zeros,
    /// Uniform on `[-a, a]` in distribution, `a` given per tensor by the
    /// layer: each of the two contributions is uniform on `[-a/sqrt2, a/sqrt2]`.
    Uniform,
    /// Explicit logical weights, indexed by the owner's party tag. The
    /// owner contributes the whole value, peers contribute zero.
    Constant(Vec<Vec<f64>>),
}

impl Initializer {
    /// One party's contribution to a `rows x cols` tensor owned by `owner`.
    /// `peers` is the number of parties contributing besides the owner.
    pub fn contribution(
        &self,
        rng: &mut PartyRng,
        owner: PartyId,
        is_owner: bool,
        rows: usize,
        cols: usize,
        half_width: f64,
        peers: usize,
    ) -> Result<Vec<f64>> {
        let n = rows * cols;
        match self {
            Initializer::Zeros => Ok(vec![0.0; n]),
            Initializer::Uniform => {
                let h = if is_owner {
                    half_width / 2f64.sqrt()
                } else {
                    half_width / (2.0 * peers as f64).sqrt()
                };
                Ok((0..n).map(|_| rng.gen_range(-h..=h)).collect())
            }
            Initializer::Constant(values) => {
                if !is_owner {
                    return Ok(vec![0.0; n]);
                }
                let v = values
                    .get(owner.tag() as usize)
                    .ok_or_else(|| Error::Config(format!("no constant weights for {owner}")))?;
                if v.len() != n {
                    return Err(Error::Shape(format!("constant weights for {owner}: {} values, need {n}", v.len())));
                }
                Ok(v.clone())
            }
        }
    }
}

/// Bit bound on a weight piece, tracked identically by both parties so
/// every he2ss can be given a public mask budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PieceBudget {
    pub init_bits: u32,
    pub step_bits: u32,
    pub steps: u64,
}

impl PieceBudget {
    pub fn new(cfg: &FixedConfig, momentum: f64) -> PieceBudget {
        let mask = cfg.mask_bits(cfg.vmax_bits);
        PieceBudget { init_bits: mask + 2, step_bits: mask + 1 + momentum_growth_bits(momentum), steps: 0 }
    }

    pub fn bits(&self) -> u32 {
        self.init_bits.max(self.step_bits + ceil_log2(self.steps as usize + 1)) + 1
    }

    pub fn step(&mut self) {
        self.steps += 1;
    }

    /// Fails if a locally held piece outgrew the agreed bound.
    pub fn check(&self, what: &str, t: &FxTensor) -> Result<()> {
        if t.max_bits() > self.bits() as u64 {
            return Err(Error::Overflow(format!("{what} has {} bits, budget {}", t.max_bits(), self.bits())));
        }
        Ok(())
    }
}

/// Extra bits of a momentum velocity over a single update: `1/(1-beta)`.
fn momentum_growth_bits(beta: f64) -> u32 {
    if beta <= 0.0 {
        0
    } else {
        ceil_log2((1.0 / (1.0 - beta)).ceil() as usize) + 1
    }
}

/// Bound on `X * piece` for features with `x_bits` raw bits and inner
/// dimension `inner`.
pub fn product_bits(piece_bits: u32, x_bits: u32, inner: usize) -> u32 {
    piece_bits + x_bits + ceil_log2(inner.max(1))
}

/// Momentum SGD on one share piece. `beta` is carried at scale `F`; the
/// velocity is floored back to the piece's scale after each multiply, so
/// pieces restore to plaintext momentum SGD within one unit per step.
#[derive(Clone, Debug)]
pub struct FederatedOptimizer {
    beta_raw: BigInt,
    frac_bits: u32,
}

impl FederatedOptimizer {
    pub fn new(beta: f64, cfg: &FixedConfig) -> Result<FederatedOptimizer> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Config(format!("momentum {beta} outside [0, 1)")));
        }
        Ok(FederatedOptimizer { beta_raw: fixed::encode_unchecked(beta, cfg.frac_bits)?, frac_bits: cfg.frac_bits })
    }

    pub fn has_momentum(&self) -> bool {
        self.beta_raw != BigInt::from(0)
    }

    /// `velocity <- floor(beta * velocity) + delta; piece <- piece - velocity`.
    pub fn step(&self, piece: &mut FxTensor, velocity: &mut FxTensor, delta: &FxTensor) -> Result<()> {
        if delta.scale() != piece.scale() {
            return Err(Error::Scale(piece.scale(), delta.scale()));
        }
        if !self.has_momentum() {
            *piece = piece.sub(delta)?;
            return Ok(());
        }
        let decayed = velocity.mul_scalar(&self.beta_raw, self.frac_bits).truncate(self.frac_bits)?;
        *velocity = decayed.add(delta)?;
        *piece = piece.sub(velocity)?;
        Ok(())
    }
}

/// Which cached ciphertext refresh a layer uses after updating a piece the
/// peer holds encrypted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheRefresh {
    /// Homomorphic when the update is linear in the sent ciphertext (no
    /// momentum), re-encryption otherwise.
    Auto,
    Homomorphic,
    Reencrypt,
}

impl CacheRefresh {
    pub(crate) fn resolve(self, momentum: f64) -> Result<CacheRefresh> {
        match (self, momentum > 0.0) {
            (CacheRefresh::Auto, false) => Ok(CacheRefresh::Homomorphic),
            (CacheRefresh::Auto, true) => Ok(CacheRefresh::Reencrypt),
            (CacheRefresh::Homomorphic, true) => {
                Err(Error::Config("homomorphic cache refresh cannot track momentum updates".into()))
            }
            (r, _) => Ok(r),
        }
    }
}

/// Step tag builder: `{prefix}.{name}{suffix}`.
#[derive(Clone, Debug)]
pub(crate) struct Tags {
    prefix: String,
    suffix: String,
}

impl Tags {
    pub(crate) fn new(prefix: &str, suffix: &str) -> Tags {
        Tags { prefix: prefix.to_string(), suffix: suffix.to_string() }
    }

    pub(crate) fn t(&self, name: &str) -> String {
        format!("{}.{}{}", self.prefix, name, self.suffix)
    }
}

/// Encodes a row-major float matrix at `scale`.
pub(crate) fn encode_matrix(cfg: &FixedConfig, rows: usize, cols: usize, v: &[f64], scale: u32) -> Result<FxTensor> {
    FxTensor::from_f64(rows, cols, v, scale, cfg)
}

/// Rejects features that are off-scale or wider than the agreed bound.
pub(crate) fn check_features(x: &FxTensor, cfg: &FixedConfig, feature_bits: u32, cols: usize) -> Result<()> {
    if x.scale() != cfg.frac_bits {
        return Err(Error::Scale(cfg.frac_bits, x.scale()));
    }
    if x.cols() != cols {
        return Err(Error::Shape(format!("features have {} columns, layer expects {cols}", x.cols())));
    }
    if x.max_bits() > (cfg.frac_bits + feature_bits) as u64 {
        return Err(Error::Overflow(format!("feature magnitude exceeds 2^{feature_bits}")));
    }
    Ok(())
}

/// Length-prefixed blocks behind a magic header, for layer checkpoints.
pub(crate) struct CheckpointWriter(Vec<u8>);

impl CheckpointWriter {
    pub(crate) fn new(magic: &[u8]) -> CheckpointWriter {
        CheckpointWriter(magic.to_vec())
    }

    pub(crate) fn block(&mut self, b: &[u8]) {
        self.0.extend_from_slice(&(b.len() as u32).to_be_bytes());
        self.0.extend_from_slice(b);
    }

    pub(crate) fn finish(self) -> Vec<u8> {
        self.0
    }
}

pub(crate) struct CheckpointReader<'a>(&'a [u8]);

impl<'a> CheckpointReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], magic: &[u8]) -> Result<CheckpointReader<'a>> {
        match bytes.strip_prefix(magic) {
            Some(rest) => Ok(CheckpointReader(rest)),
            None => Err(Error::Malformed("checkpoint header or version".into())),
        }
    }

    pub(crate) fn block(&mut self) -> Result<&'a [u8]> {
        let (b, rest) = crate::paillier::read_len_prefixed(self.0)?;
        self.0 = rest;
        Ok(b)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        let b: [u8; 8] = self.block()?.try_into().map_err(|_| Error::Malformed("checkpoint integer".into()))?;
        Ok(u64::from_be_bytes(b))
    }

    pub(crate) fn done(&self) -> Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(Error::Malformed("trailing checkpoint bytes".into()))
        }
    }
}
