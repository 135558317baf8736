//! Dense vs CSR timing of the forward `[[X W]]` kernel.

use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fixed::FixedConfig;
use crate::paillier::keygen;
use crate::party::{derive_rng, PartyId};
use crate::tensor::{CipherTensor, FxTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub sparsity: f64,
    pub nnz: usize,
    pub dense_secs: f64,
    pub sparse_secs: f64,
}

impl BenchRow {
    pub fn speedup(&self) -> f64 {
        self.dense_secs / self.sparse_secs
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub key_bits: u32,
    pub batch: usize,
    pub in_dim: usize,
    pub out: usize,
    pub sparsities: Vec<f64>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { key_bits: 512, batch: 128, in_dim: 1000, out: 1, sparsities: vec![0.0, 0.5, 0.9, 0.99], seed: 0 }
    }
}

/// Times both kernels on the same encrypted weights for every sparsity.
/// The two outputs are compared after decryption.
pub fn bench_sparse(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.sparsities.iter().any(|s| !(0.0..1.0).contains(s)) {
        return Err(Error::Config("sparsity must be in [0, 1)".into()));
    }
    let fx = FixedConfig::default();
    let f = fx.frac_bits;
    let mut rng = derive_rng(cfg.seed, "bench/sparse");
    let kp = keygen(cfg.key_bits, PartyId::B, &mut rng)?;
    let w: Vec<f64> = (0..cfg.in_dim * cfg.out).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = FxTensor::from_f64(cfg.in_dim, cfg.out, &w, f, &fx)?;
    let enc = CipherTensor::encrypt_own(&kp, &w, &mut rng)?;
    let pk = &kp.public;
    let mut out = Vec::new();
    for &s in &cfg.sparsities {
        let mut rows = vec![Vec::new(); cfg.batch];
        for row in rows.iter_mut() {
            for c in 0..cfg.in_dim {
                if rng.gen::<f64>() >= s {
                    row.push((c, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        let csr = FxTensor::csr_from_rows(cfg.in_dim, &rows, f, &fx)?;
        let dense = csr.to_dense();
        let t = Instant::now();
        let zd = CipherTensor::pc_matmul_dense(pk, &dense, &enc)?;
        let dense_secs = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let zs = CipherTensor::pc_matmul(pk, &csr, &enc)?;
        let sparse_secs = t.elapsed().as_secs_f64();
        if zd.decrypt(&kp)? != zs.decrypt(&kp)? {
            return Err(Error::Malformed("dense and CSR kernels disagree".into()));
        }
        out.push(BenchRow { sparsity: s, nnz: csr.nnz(), dense_secs, sparse_secs });
    }
    Ok(out)
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from("sparsity,nnz,dense_secs,csr_secs,speedup\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.6},{:.6},{:.3}\n", r.sparsity, r.nnz, r.dense_secs, r.sparse_secs, r.speedup()));
    }
    s
}

/// `(at 99% sparsity >= 5x, monotone over the grid)`.
pub fn verdict(rows: &[BenchRow]) -> (bool, bool) {
    let fast = rows.iter().filter(|r| r.sparsity >= 0.99).all(|r| r.speedup() >= 5.0);
    let monotone = rows.windows(2).all(|w| w[1].speedup() >= w[0].speedup());
    (fast, monotone)
}
