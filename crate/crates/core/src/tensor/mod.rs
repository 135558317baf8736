//! Fixed-point integer tensors (dense or CSR) and their encrypted counterpart.

mod cipher;

pub use cipher::CipherTensor;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, Zero};

use crate::error::{Error, Result};
use crate::fixed::{self, FixedConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
enum Storage {
    Dense(Vec<BigInt>),
    Csr { indptr: Vec<usize>, indices: Vec<usize>, values: Vec<BigInt> },
}

/// Row-major matrix of raw fixed-point integers sharing one scale exponent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FxTensor {
    rows: usize,
    cols: usize,
    scale: u32,
    storage: Storage,
}

impl FxTensor {
    pub fn zeros(rows: usize, cols: usize, scale: u32) -> FxTensor {
        FxTensor { rows, cols, scale, storage: Storage::Dense(vec![BigInt::zero(); rows * cols]) }
    }

    pub fn from_raw(rows: usize, cols: usize, scale: u32, data: Vec<BigInt>) -> Result<FxTensor> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for {rows}x{cols}", data.len())));
        }
        Ok(FxTensor { rows, cols, scale, storage: Storage::Dense(data) })
    }

    pub fn from_i64(rows: usize, cols: usize, scale: u32, data: &[i64]) -> Result<FxTensor> {
        FxTensor::from_raw(rows, cols, scale, data.iter().map(|&v| BigInt::from(v)).collect())
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64], scale: u32, cfg: &FixedConfig) -> Result<FxTensor> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for {rows}x{cols}", data.len())));
        }
        let raw = data.iter().map(|&x| cfg.encode(x, scale)).collect::<Result<Vec<_>>>()?;
        FxTensor::from_raw(rows, cols, scale, raw)
    }

    /// CSR tensor from per-row `(column, value)` lists, encoded at `scale`.
    pub fn csr_from_rows(cols: usize, rows: &[Vec<(usize, f64)>], scale: u32, cfg: &FixedConfig) -> Result<FxTensor> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            let mut row = row.clone();
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if c >= cols {
                    return Err(Error::Shape(format!("column {c} >= {cols}")));
                }
                let raw = cfg.encode(v, scale)?;
                if !raw.is_zero() {
                    indices.push(c);
                    values.push(raw);
                }
            }
            indptr.push(indices.len());
        }
        Ok(FxTensor { rows: rows.len(), cols, scale, storage: Storage::Csr { indptr, indices, values } })
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

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Csr { .. })
    }

    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Dense(d) => d.iter().filter(|v| !v.is_zero()).count(),
            Storage::Csr { values, .. } => values.len(),
        }
    }

    /// Non-zero entries of row `i` as `(column, value)`.
    pub fn row_entries(&self, i: usize) -> Vec<(usize, &BigInt)> {
        match &self.storage {
            Storage::Dense(d) => d[i * self.cols..(i + 1) * self.cols]
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_zero())
                .collect(),
            Storage::Csr { indptr, indices, values } => {
                (indptr[i]..indptr[i + 1]).map(|k| (indices[k], &values[k])).collect()
            }
        }
    }

    /// Every entry of row `i`, zeros included, as `(column, value)`.
    pub(crate) fn row_all(&self, i: usize) -> Vec<(usize, BigInt)> {
        match &self.storage {
            Storage::Dense(d) => d[i * self.cols..(i + 1) * self.cols].iter().cloned().enumerate().collect(),
            Storage::Csr { .. } => {
                let mut row = vec![BigInt::zero(); self.cols];
                for (c, v) in self.row_entries(i) {
                    row[c] = v.clone();
                }
                row.into_iter().enumerate().collect()
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> BigInt {
        match &self.storage {
            Storage::Dense(d) => d[i * self.cols + j].clone(),
            Storage::Csr { indptr, indices, values } => (indptr[i]..indptr[i + 1])
                .find(|&k| indices[k] == j)
                .map(|k| values[k].clone())
                .unwrap_or_default(),
        }
    }

    pub fn to_dense(&self) -> FxTensor {
        match &self.storage {
            Storage::Dense(_) => self.clone(),
            Storage::Csr { .. } => {
                let mut d = vec![BigInt::zero(); self.rows * self.cols];
                for i in 0..self.rows {
                    for (c, v) in self.row_entries(i) {
                        d[i * self.cols + c] = v.clone();
                    }
                }
                FxTensor { rows: self.rows, cols: self.cols, scale: self.scale, storage: Storage::Dense(d) }
            }
        }
    }

    pub fn to_csr(&self) -> FxTensor {
        match &self.storage {
            Storage::Csr { .. } => self.clone(),
            Storage::Dense(_) => {
                let mut indptr = vec![0];
                let mut indices = Vec::new();
                let mut values = Vec::new();
                for i in 0..self.rows {
                    for (c, v) in self.row_entries(i) {
                        indices.push(c);
                        values.push(v.clone());
                    }
                    indptr.push(indices.len());
                }
                FxTensor { rows: self.rows, cols: self.cols, scale: self.scale, storage: Storage::Csr { indptr, indices, values } }
            }
        }
    }

    /// Dense row-major raw values.
    pub fn raw(&self) -> Vec<BigInt> {
        match self.to_dense().storage {
            Storage::Dense(d) => d,
            Storage::Csr { .. } => unreachable!(),
        }
    }

    fn dense_ref(&self) -> Option<&[BigInt]> {
        match &self.storage {
            Storage::Dense(d) => Some(d),
            Storage::Csr { .. } => None,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.raw().iter().map(|r| fixed::decode(r, self.scale)).collect()
    }

    /// Largest bit length of any entry.
    pub fn max_bits(&self) -> u64 {
        match &self.storage {
            Storage::Dense(d) => d.iter().map(|v| v.bits()).max().unwrap_or(0),
            Storage::Csr { values, .. } => values.iter().map(|v| v.bits()).max().unwrap_or(0),
        }
    }

    fn map(&self, f: impl Fn(&BigInt) -> BigInt, scale: u32) -> FxTensor {
        let data = self.raw().iter().map(f).collect();
        FxTensor { rows: self.rows, cols: self.cols, scale, storage: Storage::Dense(data) }
    }

    fn zip(&self, other: &FxTensor, op: &str, f: impl Fn(&BigInt, &BigInt) -> BigInt) -> Result<FxTensor> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!("{op}: {:?} vs {:?}", self.shape(), other.shape())));
        }
        if self.scale != other.scale {
            return Err(Error::Scale(self.scale, other.scale));
        }
        let (a, b) = (self.raw(), other.raw());
        let data = a.iter().zip(&b).map(|(x, y)| f(x, y)).collect();
        Ok(FxTensor { rows: self.rows, cols: self.cols, scale: self.scale, storage: Storage::Dense(data) })
    }

    pub fn add(&self, other: &FxTensor) -> Result<FxTensor> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &FxTensor) -> Result<FxTensor> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn neg(&self) -> FxTensor {
        self.map(|a| -a, self.scale)
    }

    /// Multiplies every entry by a raw scalar at `scalar_scale`.
    pub fn mul_scalar(&self, k: &BigInt, scalar_scale: u32) -> FxTensor {
        self.map(|a| a * k, self.scale + scalar_scale)
    }

    /// Floors every entry by `2^k`, lowering the scale by `k`.
    pub fn truncate(&self, k: u32) -> Result<FxTensor> {
        if k > self.scale {
            return Err(Error::Scale(self.scale, k));
        }
        Ok(self.map(|a| fixed::truncate(a, k), self.scale - k))
    }

    /// Raises the scale by `k` bits without changing the value.
    pub fn upscale(&self, k: u32) -> FxTensor {
        self.map(|a| a << k, self.scale + k)
    }

    pub fn with_scale(mut self, scale: u32) -> FxTensor {
        self.scale = scale;
        self
    }

    pub fn transpose(&self) -> FxTensor {
        let mut d = vec![BigInt::zero(); self.rows * self.cols];
        for i in 0..self.rows {
            for (c, v) in self.row_entries(i) {
                d[c * self.rows + i] = v.clone();
            }
        }
        FxTensor { rows: self.cols, cols: self.rows, scale: self.scale, storage: Storage::Dense(d) }
    }

    /// `self * rhs`; scales add.
    pub fn matmul(&self, rhs: &FxTensor) -> Result<FxTensor> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", self.shape(), rhs.shape())));
        }
        let r = rhs.raw();
        let mut out = vec![BigInt::zero(); self.rows * rhs.cols];
        for i in 0..self.rows {
            for (k, x) in self.row_entries(i) {
                for j in 0..rhs.cols {
                    out[i * rhs.cols + j] += x * &r[k * rhs.cols + j];
                }
            }
        }
        FxTensor::from_raw(self.rows, rhs.cols, self.scale + rhs.scale, out)
    }

    /// `self^T * rhs` without materializing the transpose.
    pub fn matmul_t(&self, rhs: &FxTensor) -> Result<FxTensor> {
        if self.rows != rhs.rows {
            return Err(Error::Shape(format!("matmul_t {:?}^T x {:?}", self.shape(), rhs.shape())));
        }
        let r = rhs.raw();
        let mut out = vec![BigInt::zero(); self.cols * rhs.cols];
        for i in 0..self.rows {
            for (k, x) in self.row_entries(i) {
                for j in 0..rhs.cols {
                    out[k * rhs.cols + j] += x * &r[i * rhs.cols + j];
                }
            }
        }
        FxTensor::from_raw(self.cols, rhs.cols, self.scale + rhs.scale, out)
    }

    /// Row gather: `out[b] = self[idx[b]]`.
    pub fn lkup(&self, idx: &[usize]) -> Result<FxTensor> {
        let d = self.to_dense();
        let src = d.dense_ref().unwrap();
        let mut out = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            if i >= self.rows {
                return Err(Error::Shape(format!("index {i} >= vocabulary {}", self.rows)));
            }
            out.extend_from_slice(&src[i * self.cols..(i + 1) * self.cols]);
        }
        FxTensor::from_raw(idx.len(), self.cols, self.scale, out)
    }

    /// Scatter-add rows into a `vocab x cols` tensor: `out[idx[b]] += self[b]`.
    pub fn lkup_bw(&self, idx: &[usize], vocab: usize) -> Result<FxTensor> {
        if idx.len() != self.rows {
            return Err(Error::Shape(format!("{} indices for {} rows", idx.len(), self.rows)));
        }
        let src = self.raw();
        let mut out = vec![BigInt::zero(); vocab * self.cols];
        for (b, &i) in idx.iter().enumerate() {
            if i >= vocab {
                return Err(Error::Shape(format!("index {i} >= vocabulary {vocab}")));
            }
            for j in 0..self.cols {
                out[i * self.cols + j] += &src[b * self.cols + j];
            }
        }
        FxTensor::from_raw(vocab, self.cols, self.scale, out)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> FxTensor {
        match &self.storage {
            Storage::Dense(d) => FxTensor {
                rows: end - start,
                cols: self.cols,
                scale: self.scale,
                storage: Storage::Dense(d[start * self.cols..end * self.cols].to_vec()),
            },
            Storage::Csr { indptr, indices, values } => {
                let base = indptr[start];
                FxTensor {
                    rows: end - start,
                    cols: self.cols,
                    scale: self.scale,
                    storage: Storage::Csr {
                        indptr: indptr[start..=end].iter().map(|p| p - base).collect(),
                        indices: indices[base..indptr[end]].to_vec(),
                        values: values[base..indptr[end]].to_vec(),
                    },
                }
            }
        }
    }

    /// Rows selected by `order`, keeping the storage format.
    pub fn select_rows(&self, order: &[usize]) -> FxTensor {
        match &self.storage {
            Storage::Dense(d) => {
                let mut out = Vec::with_capacity(order.len() * self.cols);
                for &i in order {
                    out.extend_from_slice(&d[i * self.cols..(i + 1) * self.cols]);
                }
                FxTensor { rows: order.len(), cols: self.cols, scale: self.scale, storage: Storage::Dense(out) }
            }
            Storage::Csr { indptr, indices, values } => {
                let mut ip = vec![0];
                let mut ix = Vec::new();
                let mut vs = Vec::new();
                for &i in order {
                    ix.extend_from_slice(&indices[indptr[i]..indptr[i + 1]]);
                    vs.extend_from_slice(&values[indptr[i]..indptr[i + 1]]);
                    ip.push(ix.len());
                }
                FxTensor {
                    rows: order.len(),
                    cols: self.cols,
                    scale: self.scale,
                    storage: Storage::Csr { indptr: ip, indices: ix, values: vs },
                }
            }
        }
    }

    /// Splits into `parts` tensors summing to `self`: floor quotient each,
    /// remainder added to the first.
    pub fn split_even(&self, parts: usize) -> Vec<FxTensor> {
        let m = BigInt::from(parts);
        let raw = self.raw();
        let (q, r): (Vec<BigInt>, Vec<BigInt>) = raw.iter().map(|v| v.div_mod_floor(&m)).unzip();
        let mut out = Vec::with_capacity(parts);
        for p in 0..parts {
            let data = if p == 0 { q.iter().zip(&r).map(|(a, b)| a + b).collect() } else { q.clone() };
            out.push(FxTensor { rows: self.rows, cols: self.cols, scale: self.scale, storage: Storage::Dense(data) });
        }
        out
    }

    /// `rows(4) || cols(4) || scale(1) || per entry: len(4) || signed BE bytes`.
    pub fn to_wire(&self) -> Vec<u8> {
        let raw = self.raw();
        let mut out = Vec::with_capacity(9 + raw.len() * 12);
        out.extend_from_slice(&(self.rows as u32).to_be_bytes());
        out.extend_from_slice(&(self.cols as u32).to_be_bytes());
        out.push(self.scale as u8);
        for v in &raw {
            let b = v.to_signed_bytes_be();
            out.extend_from_slice(&(b.len() as u32).to_be_bytes());
            out.extend_from_slice(&b);
        }
        out
    }

    pub fn from_wire(bytes: &[u8]) -> Result<FxTensor> {
        if bytes.len() < 9 {
            return Err(Error::Malformed("truncated tensor header".into()));
        }
        let rows = u32::from_be_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let cols = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let scale = bytes[8] as u32;
        let count = rows.checked_mul(cols).ok_or_else(|| Error::Malformed("tensor too large".into()))?;
        if count > bytes.len() {
            return Err(Error::Malformed("tensor shape exceeds payload".into()));
        }
        let mut rest = &bytes[9..];
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let (b, r) = crate::paillier::read_len_prefixed(rest)?;
            data.push(BigInt::from_signed_bytes_be(b));
            rest = r;
        }
        if !rest.is_empty() {
            return Err(Error::Malformed("trailing bytes after tensor".into()));
        }
        FxTensor::from_raw(rows, cols, scale, data)
    }

    /// True if every entry is zero.
    pub fn is_zero(&self) -> bool {
        match &self.storage {
            Storage::Dense(d) => d.iter().all(|v| v.is_zero()),
            Storage::Csr { values, .. } => values.iter().all(|v| v.is_zero()),
        }
    }

    pub fn max_abs_diff(&self, other: &FxTensor) -> Result<BigInt> {
        let d = self.sub(other)?;
        Ok(d.raw().iter().map(|v| v.abs()).max().unwrap_or_default())
    }
}
