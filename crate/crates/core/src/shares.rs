//! Additive two-party shares over the integers and the conversions between
//! homomorphic ciphertexts and shares.

use num_bigint::BigInt;

use crate::error::{Error, Result};
use crate::fixed::{self, FixedConfig};
use crate::party::PartyId;
use crate::tensor::{CipherTensor, FxTensor};
use crate::transport::ProtocolSession;

/// One party's piece of a shared scalar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharePiece {
    pub raw: BigInt,
    pub scale: u32,
}

impl SharePiece {
    /// `len(4) || signed BE bytes || scale(1)`.
    pub fn to_wire(&self) -> Vec<u8> {
        let b = self.raw.to_signed_bytes_be();
        let mut out = Vec::with_capacity(5 + b.len());
        out.extend_from_slice(&(b.len() as u32).to_be_bytes());
        out.extend_from_slice(&b);
        out.push(self.scale as u8);
        out
    }

    pub fn from_wire(bytes: &[u8]) -> Result<SharePiece> {
        let (b, rest) = crate::paillier::read_len_prefixed(bytes)?;
        match rest {
            [scale] => Ok(SharePiece { raw: BigInt::from_signed_bytes_be(b), scale: *scale as u32 }),
            _ => Err(Error::Malformed("share piece trailer".into())),
        }
    }
}

/// Splits `v` into `(kept, other)` with `kept` a fresh mask for a value
/// bounded by `2^bound_bits`.
pub fn share<R: rand::RngCore>(cfg: &FixedConfig, v: &SharePiece, bound_bits: u32, rng: &mut R) -> (SharePiece, SharePiece) {
    let m = cfg.sample_mask(bound_bits, rng);
    let other = &v.raw - &m;
    (SharePiece { raw: m, scale: v.scale }, SharePiece { raw: other, scale: v.scale })
}

pub fn restore(a: &SharePiece, b: &SharePiece) -> Result<SharePiece> {
    if a.scale != b.scale {
        return Err(Error::Scale(a.scale, b.scale));
    }
    Ok(SharePiece { raw: &a.raw + &b.raw, scale: a.scale })
}

/// Local floor truncation of one piece; restored pieces differ from the
/// truncated secret by at most one unit.
pub fn truncate_piece(p: &SharePiece, k: u32) -> SharePiece {
    SharePiece { raw: fixed::truncate(&p.raw, k), scale: p.scale - k }
}

/// Random mask tensor for values bounded by `2^bound_bits`.
pub fn mask_tensor<R: rand::RngCore>(cfg: &FixedConfig, rows: usize, cols: usize, scale: u32, bound_bits: u32, rng: &mut R) -> FxTensor {
    let data = (0..rows * cols).map(|_| cfg.sample_mask(bound_bits, rng)).collect();
    FxTensor::from_raw(rows, cols, scale, data).expect("shape")
}

fn check_capacity(s: &ProtocolSession, bound_bits: u32) -> Result<()> {
    let needed = s.fixed().masked_bits(bound_bits);
    let capacity = s.capacity_bits();
    if needed > capacity {
        return Err(Error::Capacity { needed, capacity });
    }
    Ok(())
}

/// HE-to-shares, non-key side. Holds `[[v]]` under the peer's key with
/// `|v| < 2^bound_bits`; keeps the mask `phi` and sends a re-randomized
/// `[[v - phi]]`. Returns `(phi, sent ciphertext)`.
pub fn he2ss_send(s: &mut ProtocolSession, tag: &str, v: &CipherTensor, bound_bits: u32) -> Result<(FxTensor, CipherTensor)> {
    let peer = s.peer();
    if v.owner() != peer {
        return Err(Error::KeyMismatch { expected: peer, found: v.owner() });
    }
    check_capacity(s, bound_bits)?;
    let cfg = *s.fixed();
    let phi = mask_tensor(&cfg, v.rows(), v.cols(), v.scale(), bound_bits, s.rng());
    let pk = s.peer_pk().clone();
    let blinded = v.add_plain(&pk, &phi.neg())?;
    let out = blinded.rerandomize(&pk, s.rng())?;
    s.send_cipher(tag, &out)?;
    Ok((phi, out))
}

/// HE-to-shares, key side. Receives and decrypts `[[v - phi]]`.
pub fn he2ss_recv(s: &mut ProtocolSession, tag: &str, bound_bits: u32) -> Result<FxTensor> {
    check_capacity(s, bound_bits)?;
    let c = s.recv_cipher(tag)?;
    if c.owner() != s.me() {
        return Err(Error::KeyMismatch { expected: s.me(), found: c.owner() });
    }
    let piece = c.decrypt(s.keys())?;
    if piece.max_bits() > s.fixed().masked_bits(bound_bits) as u64 {
        return Err(Error::MaskBound { tag: tag.to_string() });
    }
    Ok(piece)
}

/// Shares-to-HE. Each party encrypts its piece under its own key and sends
/// it; each ends with `[[v]]` under the peer's key. Party A sends first.
pub fn ss2he(s: &mut ProtocolSession, tag: &str, own: &FxTensor) -> Result<CipherTensor> {
    let keys = s.shared_keys();
    let enc = CipherTensor::encrypt_own(&keys, own, s.rng())?;
    let send_tag = format!("{tag}.{}", s.me());
    let recv_tag = format!("{tag}.{}", s.peer());
    let theirs = if sends_first(s.me()) {
        s.send_cipher(&send_tag, &enc)?;
        s.recv_cipher(&recv_tag)?
    } else {
        let t = s.recv_cipher(&recv_tag)?;
        s.send_cipher(&send_tag, &enc)?;
        t
    };
    if theirs.owner() != s.peer() {
        return Err(Error::KeyMismatch { expected: s.peer(), found: theirs.owner() });
    }
    let pk = s.peer_pk().clone();
    theirs.add_plain(&pk, own)
}

/// Plain sharing of a locally known tensor: keeps a mask, sends `v - mask`.
pub fn share_send(s: &mut ProtocolSession, tag: &str, v: &FxTensor, bound_bits: u32) -> Result<FxTensor> {
    let cfg = *s.fixed();
    let m = mask_tensor(&cfg, v.rows(), v.cols(), v.scale(), bound_bits, s.rng());
    s.send_blinded(tag, &v.sub(&m)?)?;
    Ok(m)
}

/// Whether `me` transmits first in symmetric exchanges (A-side parties do).
pub fn sends_first(me: PartyId) -> bool {
    !me.is_b()
}
