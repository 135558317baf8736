use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};

use super::FxTensor;
use crate::error::{Error, Result};
use crate::paillier::{Ciphertext, KeyPair, PublicKey};
use crate::party::PartyId;

/// Element-wise Paillier encryption of an [`FxTensor`], all under one key.
///
/// Results of homomorphic operations are not re-randomized; anything leaving
/// a party goes through a fresh encryption or [`CipherTensor::rerandomize`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CipherTensor {
    rows: usize,
    cols: usize,
    scale: u32,
    owner: PartyId,
    data: Vec<BigUint>,
}

/// Running product of `c^k` terms with signed `k`, inverting once at the end.
struct SignedAcc {
    pos: BigUint,
    neg: Option<BigUint>,
}

impl SignedAcc {
    fn new() -> SignedAcc {
        SignedAcc { pos: BigUint::one(), neg: None }
    }

    fn push(&mut self, pk: &PublicKey, c: &BigUint, k: &BigInt) {
        match k.sign() {
            Sign::NoSign => {}
            Sign::Plus => {
                let t = pk.pow_raw(c, k.magnitude());
                self.pos = pk.mul_raw(&self.pos, &t);
            }
            Sign::Minus => {
                let t = pk.pow_raw(c, k.magnitude());
                self.neg = Some(match self.neg.take() {
                    Some(n) => pk.mul_raw(&n, &t),
                    None => t,
                });
            }
        }
    }

    /// `push` without the zero shortcut: every entry costs one scalar
    /// multiplication and one homomorphic addition.
    fn push_dense(&mut self, pk: &PublicKey, c: &BigUint, k: &BigInt) {
        if k.sign() == Sign::NoSign {
            let t = pk.pow_raw(c, &BigUint::zero());
            self.pos = pk.mul_raw(&self.pos, &t);
        } else {
            self.push(pk, c, k);
        }
    }

    fn finish(self, pk: &PublicKey) -> Result<BigUint> {
        match self.neg {
            None => Ok(self.pos),
            Some(n) => Ok(pk.mul_raw(&self.pos, &pk.inv_raw(&n)?)),
        }
    }
}

impl CipherTensor {
    pub fn encrypt<R: RngCore + CryptoRng>(pk: &PublicKey, x: &FxTensor, rng: &mut R) -> Result<CipherTensor> {
        let data = x.raw().iter().map(|v| pk.encrypt(v, rng).map(Ciphertext::into_raw)).collect::<Result<_>>()?;
        Ok(CipherTensor { rows: x.rows(), cols: x.cols(), scale: x.scale(), owner: pk.owner(), data })
    }

    /// Encryption under one's own key (CRT fast path, same distribution).
    pub fn encrypt_own<R: RngCore + CryptoRng>(kp: &KeyPair, x: &FxTensor, rng: &mut R) -> Result<CipherTensor> {
        let data = x.raw().iter().map(|v| kp.encrypt(v, rng).map(Ciphertext::into_raw)).collect::<Result<_>>()?;
        Ok(CipherTensor { rows: x.rows(), cols: x.cols(), scale: x.scale(), owner: kp.owner(), data })
    }

    pub fn decrypt(&self, kp: &KeyPair) -> Result<FxTensor> {
        let data = self.data.iter().map(|v| kp.decrypt(&Ciphertext::from_raw(v.clone(), self.owner))).collect::<Result<_>>()?;
        FxTensor::from_raw(self.rows, self.cols, self.scale, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn scale(&self) -> u32 {
        self.scale
    }

    pub fn owner(&self) -> PartyId {
        self.owner
    }

    pub fn get(&self, i: usize, j: usize) -> Ciphertext {
        Ciphertext::from_raw(self.data[i * self.cols + j].clone(), self.owner)
    }

    fn check(&self, pk: &PublicKey) -> Result<()> {
        if self.owner != pk.owner() {
            return Err(Error::KeyMismatch { expected: pk.owner(), found: self.owner });
        }
        Ok(())
    }

    fn check_same(&self, other: &CipherTensor, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!("{op}: {:?} vs {:?}", self.shape(), other.shape())));
        }
        if self.scale != other.scale {
            return Err(Error::Scale(self.scale, other.scale));
        }
        if self.owner != other.owner {
            return Err(Error::KeyMismatch { expected: self.owner, found: other.owner });
        }
        Ok(())
    }

    fn with_data(&self, rows: usize, cols: usize, scale: u32, data: Vec<BigUint>) -> CipherTensor {
        CipherTensor { rows, cols, scale, owner: self.owner, data }
    }

    pub fn add(&self, pk: &PublicKey, other: &CipherTensor) -> Result<CipherTensor> {
        self.check(pk)?;
        self.check_same(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| pk.mul_raw(a, b)).collect();
        Ok(self.with_data(self.rows, self.cols, self.scale, data))
    }

    pub fn neg(&self, pk: &PublicKey) -> Result<CipherTensor> {
        self.check(pk)?;
        let data = self.data.iter().map(|a| pk.inv_raw(a)).collect::<Result<_>>()?;
        Ok(self.with_data(self.rows, self.cols, self.scale, data))
    }

    pub fn sub(&self, pk: &PublicKey, other: &CipherTensor) -> Result<CipherTensor> {
        self.add(pk, &other.neg(pk)?)
    }

    /// `[[a]] + b` element-wise for plaintext `b` at the same scale.
    pub fn add_plain(&self, pk: &PublicKey, b: &FxTensor) -> Result<CipherTensor> {
        self.check(pk)?;
        if self.shape() != b.shape() {
            return Err(Error::Shape(format!("add_plain: {:?} vs {:?}", self.shape(), b.shape())));
        }
        if self.scale != b.scale() {
            return Err(Error::Scale(self.scale, b.scale()));
        }
        let data = self
            .data
            .iter()
            .zip(b.raw())
            .map(|(a, k)| pk.add_plain(&Ciphertext::from_raw(a.clone(), self.owner), &k).map(Ciphertext::into_raw))
            .collect::<Result<_>>()?;
        Ok(self.with_data(self.rows, self.cols, self.scale, data))
    }

    pub fn rerandomize<R: RngCore + CryptoRng>(&self, pk: &PublicKey, rng: &mut R) -> Result<CipherTensor> {
        self.check(pk)?;
        let data = self
            .data
            .iter()
            .map(|a| pk.rerandomize(&Ciphertext::from_raw(a.clone(), self.owner), rng).map(Ciphertext::into_raw))
            .collect::<Result<_>>()?;
        Ok(self.with_data(self.rows, self.cols, self.scale, data))
    }

    pub fn transpose(&self) -> CipherTensor {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.data[i * self.cols + j].clone());
            }
        }
        self.with_data(self.cols, self.rows, self.scale, data)
    }

    /// `[[X W]]` for plaintext `X` (dense or CSR). Cost: one scalar
    /// multiplication per non-zero of `X` per output column.
    pub fn pc_matmul(pk: &PublicKey, x: &FxTensor, w: &CipherTensor) -> Result<CipherTensor> {
        w.check(pk)?;
        if x.cols() != w.rows {
            return Err(Error::Shape(format!("pc_matmul {:?} x {:?}", x.shape(), w.shape())));
        }
        let mut data = Vec::with_capacity(x.rows() * w.cols);
        for i in 0..x.rows() {
            let row = x.row_entries(i);
            for j in 0..w.cols {
                let mut acc = SignedAcc::new();
                for &(k, v) in &row {
                    acc.push(pk, &w.data[k * w.cols + j], v);
                }
                data.push(acc.finish(pk)?);
            }
        }
        Ok(w.with_data(x.rows(), w.cols, x.scale() + w.scale, data))
    }

    /// Dense reference path: same arithmetic as [`pc_matmul`] but one scalar
    /// multiplication per entry of `X`, zeros included. Used as the baseline
    /// for the sparse kernel.
    ///
    /// [`pc_matmul`]: CipherTensor::pc_matmul
    pub fn pc_matmul_dense(pk: &PublicKey, x: &FxTensor, w: &CipherTensor) -> Result<CipherTensor> {
        w.check(pk)?;
        if x.cols() != w.rows {
            return Err(Error::Shape(format!("pc_matmul {:?} x {:?}", x.shape(), w.shape())));
        }
        let mut data = Vec::with_capacity(x.rows() * w.cols);
        for i in 0..x.rows() {
            let row = x.row_all(i);
            for j in 0..w.cols {
                let mut acc = SignedAcc::new();
                for (k, v) in &row {
                    acc.push_dense(pk, &w.data[k * w.cols + j], v);
                }
                data.push(acc.finish(pk)?);
            }
        }
        Ok(w.with_data(x.rows(), w.cols, x.scale() + w.scale, data))
    }

    /// `[[X^T G]]` for plaintext `X` (batch x in) and encrypted `G` (batch x out).
    pub fn pc_matmul_t(pk: &PublicKey, x: &FxTensor, g: &CipherTensor) -> Result<CipherTensor> {
        g.check(pk)?;
        if x.rows() != g.rows {
            return Err(Error::Shape(format!("pc_matmul_t {:?}^T x {:?}", x.shape(), g.shape())));
        }
        let mut accs: Vec<SignedAcc> = (0..x.cols() * g.cols).map(|_| SignedAcc::new()).collect();
        for i in 0..x.rows() {
            for (k, v) in x.row_entries(i) {
                for j in 0..g.cols {
                    accs[k * g.cols + j].push(pk, &g.data[i * g.cols + j], v);
                }
            }
        }
        let data = accs.into_iter().map(|a| a.finish(pk)).collect::<Result<_>>()?;
        Ok(g.with_data(x.cols(), g.cols, x.scale() + g.scale, data))
    }

    /// `[[C P]]` for encrypted `C` (rows x k) and plaintext `P` (k x cols).
    pub fn cp_matmul(pk: &PublicKey, c: &CipherTensor, p: &FxTensor) -> Result<CipherTensor> {
        c.check(pk)?;
        if c.cols != p.rows() {
            return Err(Error::Shape(format!("cp_matmul {:?} x {:?}", c.shape(), p.shape())));
        }
        let pt = p.transpose();
        let mut data = Vec::with_capacity(c.rows * p.cols());
        for i in 0..c.rows {
            for j in 0..p.cols() {
                let mut acc = SignedAcc::new();
                for (k, v) in pt.row_entries(j) {
                    acc.push(pk, &c.data[i * c.cols + k], v);
                }
                data.push(acc.finish(pk)?);
            }
        }
        Ok(c.with_data(c.rows, p.cols(), c.scale + p.scale(), data))
    }

    /// Row gather `out[b] = self[idx[b]]`.
    pub fn row_gather(&self, idx: &[usize]) -> Result<CipherTensor> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            if i >= self.rows {
                return Err(Error::Shape(format!("index {i} >= vocabulary {}", self.rows)));
            }
            data.extend_from_slice(&self.data[i * self.cols..(i + 1) * self.cols]);
        }
        Ok(self.with_data(idx.len(), self.cols, self.scale, data))
    }

    /// Homomorphic scatter-add into `vocab` rows: `out[idx[b]] += self[b]`.
    pub fn scatter_add_rows(&self, pk: &PublicKey, idx: &[usize], vocab: usize) -> Result<CipherTensor> {
        self.check(pk)?;
        if idx.len() != self.rows {
            return Err(Error::Shape(format!("{} indices for {} rows", idx.len(), self.rows)));
        }
        let mut data = vec![BigUint::one(); vocab * self.cols];
        for (b, &i) in idx.iter().enumerate() {
            if i >= vocab {
                return Err(Error::Shape(format!("index {i} >= vocabulary {vocab}")));
            }
            for j in 0..self.cols {
                data[i * self.cols + j] = pk.mul_raw(&data[i * self.cols + j], &self.data[b * self.cols + j]);
            }
        }
        Ok(self.with_data(vocab, self.cols, self.scale, data))
    }

    /// `rows(4) || cols(4) || scale(1) || owner(1) || per entry: len(4) || BE bytes`.
    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + self.data.len() * 132);
        out.extend_from_slice(&(self.rows as u32).to_be_bytes());
        out.extend_from_slice(&(self.cols as u32).to_be_bytes());
        out.push(self.scale as u8);
        out.push(self.owner.tag());
        for v in &self.data {
            let b = v.to_bytes_be();
            out.extend_from_slice(&(b.len() as u32).to_be_bytes());
            out.extend_from_slice(&b);
        }
        out
    }

    pub fn from_wire(bytes: &[u8]) -> Result<CipherTensor> {
        if bytes.len() < 10 {
            return Err(Error::Malformed("truncated ciphertext tensor header".into()));
        }
        let rows = u32::from_be_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let cols = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let scale = bytes[8] as u32;
        let owner = PartyId::from_tag(bytes[9]);
        let count = rows.checked_mul(cols).ok_or_else(|| Error::Malformed("tensor too large".into()))?;
        if count > bytes.len() {
            return Err(Error::Malformed("tensor shape exceeds payload".into()));
        }
        let mut rest = &bytes[10..];
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let (b, r) = crate::paillier::read_len_prefixed(rest)?;
            data.push(BigUint::from_bytes_be(b));
            rest = r;
        }
        if !rest.is_empty() {
            return Err(Error::Malformed("trailing bytes after ciphertext tensor".into()));
        }
        Ok(CipherTensor { rows, cols, scale, owner, data })
    }
}
