//! Shared harness: test-only views that hold both parties' state at once.
#![allow(dead_code)]

use std::time::Duration;

use num_bigint::BigInt;
use rand::Rng;
use vfl_core::fixed::FixedConfig;
use vfl_core::layers::{EmbedMatMulLayer, MatMulLayer, MultiPartyB, MultiPartyConfig, MultiPartyMember};
use vfl_core::party::{derive_rng, PartyId, SeedSource};
use vfl_core::tensor::FxTensor;
use vfl_core::transport::{generate_keys, run_local_star, SessionConfig, Transcript};
use vfl_core::paillier::KeyPair;

pub const SEED_A: u64 = 11;
pub const SEED_B: u64 = 22;

pub fn session_cfg() -> SessionConfig {
    SessionConfig { recv_timeout: Duration::from_secs(60), ..SessionConfig::with_key_bits(512) }
}

pub fn keys(party: PartyId, seed: u64) -> std::sync::Arc<KeyPair> {
    generate_keys(&session_cfg(), party, SeedSource::Fixed(seed)).unwrap()
}

/// `(W_A, W_B)` assembled from both halves of a two-party layer.
pub fn restore_matmul(a: &MatMulLayer, b: &MatMulLayer) -> (FxTensor, FxTensor) {
    (a.u().add(b.v_peer()).unwrap(), b.u().add(a.v_peer()).unwrap())
}

/// Replays the initializer streams of both parties: each draws its own
/// contribution first, then its contribution to the peer's weights, each
/// uniform on `[-h/sqrt2, h/sqrt2]`.
pub fn replay_uniform_init(name: &str, in_a: usize, in_b: usize, out: usize) -> (FxTensor, FxTensor) {
    let fx = FixedConfig::default();
    let h = 1.0 / ((in_a + in_b) as f64).sqrt() / 2f64.sqrt();
    let draw = |rng: &mut vfl_core::party::PartyRng, n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-h..=h)).collect() };
    let mut ra = derive_rng(SEED_A, &format!("init/{name}"));
    let mut rb = derive_rng(SEED_B, &format!("init/{name}"));
    let a_own = draw(&mut ra, in_a * out);
    let a_peer = draw(&mut ra, in_b * out);
    let b_own = draw(&mut rb, in_b * out);
    let b_peer = draw(&mut rb, in_a * out);
    let enc = |v: &[f64], rows| FxTensor::from_f64(rows, out, v, 40, &fx).unwrap();
    (
        enc(&a_own, in_a).add(&enc(&b_peer, in_a)).unwrap(),
        enc(&b_own, in_b).add(&enc(&a_peer, in_b)).unwrap(),
    )
}

/// Dense random features at scale F with values in (-range, range).
pub fn random_features(seed: u64, rows: usize, cols: usize, range: f64, density: f64) -> FxTensor {
    let mut rng = derive_rng(seed, "features");
    let v: Vec<f64> = (0..rows * cols)
        .map(|_| if rng.gen_bool(density) { rng.gen_range(-range..range) } else { 0.0 })
        .collect();
    FxTensor::from_f64(rows, cols, &v, 20, &FixedConfig::default()).unwrap()
}

pub fn raw_i64(t: &FxTensor) -> Vec<i128> {
    t.raw().iter().map(|v| i128::try_from(v.clone()).unwrap()).collect()
}

pub fn max_abs(t: &FxTensor) -> BigInt {
    t.raw().iter().map(|v| if v < &BigInt::from(0) { -v } else { v.clone() }).max().unwrap_or_default()
}

/// `(Q_A, W_A, Q_B, W_B)` assembled from both halves of an embed layer.
pub fn restore_embed(a: &EmbedMatMulLayer, b: &EmbedMatMulLayer) -> [FxTensor; 4] {
    [
        a.s_own().add(b.t_peer()).unwrap(),
        a.u_own().add(b.v_peer()).unwrap(),
        b.s_own().add(a.t_peer()).unwrap(),
        b.u_own().add(a.v_peer()).unwrap(),
    ]
}

/// Replays both parties' embed initializer streams: own table, own
/// weights, then the same two contributions for the peer.
pub fn replay_embed_init(name: &str, vocab_a: usize, vocab_b: usize, dim: usize, out: usize) -> [FxTensor; 4] {
    let fx = FixedConfig::default();
    let ht = 1.0 / (dim as f64).sqrt() / 2f64.sqrt();
    let hw = 1.0 / ((2 * dim) as f64).sqrt() / 2f64.sqrt();
    let draw = |rng: &mut vfl_core::party::PartyRng, rows: usize, cols: usize, h: f64| -> FxTensor {
        let v: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-h..=h)).collect();
        FxTensor::from_f64(rows, cols, &v, 40, &fx).unwrap()
    };
    let mut ra = derive_rng(SEED_A, &format!("init/{name}"));
    let mut rb = derive_rng(SEED_B, &format!("init/{name}"));
    let (a_t, a_w) = (draw(&mut ra, vocab_a, dim, ht), draw(&mut ra, dim, out, hw));
    let (a_pt, a_pw) = (draw(&mut ra, vocab_b, dim, ht), draw(&mut ra, dim, out, hw));
    let (b_t, b_w) = (draw(&mut rb, vocab_b, dim, ht), draw(&mut rb, dim, out, hw));
    let (b_pt, b_pw) = (draw(&mut rb, vocab_a, dim, ht), draw(&mut rb, dim, out, hw));
    [a_t.add(&b_pt).unwrap(), a_w.add(&b_pw).unwrap(), b_t.add(&a_pt).unwrap(), b_w.add(&a_pw).unwrap()]
}

/// Random indices below `vocab`.
pub fn random_indices(seed: u64, n: usize, vocab: usize) -> Vec<usize> {
    let mut rng = derive_rng(seed, "indices");
    (0..n).map(|_| rng.gen_range(0..vocab)).collect()
}

/// Plaintext embed forward at 4F.
pub fn embed_forward(w: &[FxTensor; 4], ia: &[usize], ib: &[usize]) -> FxTensor {
    let za = w[0].lkup(ia).unwrap().matmul(&w[1]).unwrap();
    za.add(&w[2].lkup(ib).unwrap().matmul(&w[3]).unwrap()).unwrap()
}

/// One integer SGD step: every gradient at 3F, floored by F.
pub fn embed_sgd_step(w: &[FxTensor; 4], ia: &[usize], ib: &[usize], g: &FxTensor) -> [FxTensor; 4] {
    let (ea, eb) = (w[0].lkup(ia).unwrap(), w[2].lkup(ib).unwrap());
    let gq_a = g.matmul(&w[1].transpose()).unwrap().lkup_bw(ia, w[0].rows()).unwrap();
    let gq_b = g.matmul(&w[3].transpose()).unwrap().lkup_bw(ib, w[2].rows()).unwrap();
    let grads = [gq_a, ea.matmul_t(g).unwrap(), gq_b, eb.matmul_t(g).unwrap()];
    let mut out = w.clone();
    for (o, d) in out.iter_mut().zip(grads) {
        *o = o.sub(&d.truncate(20).unwrap()).unwrap();
    }
    out
}

/// Seed of member `A(index)` in multiparty runs.
pub fn member_seed(index: usize) -> u64 {
    SEED_A + 100 * (index as u64 - 1)
}

/// Replays every party's initializer stream.
pub fn replay_multiparty_init(name: &str, in_a: &[usize], in_b: usize, out: usize) -> (Vec<FxTensor>, FxTensor) {
    let fx = FixedConfig::default();
    let m = in_a.len();
    let h = 1.0 / ((in_a.iter().sum::<usize>() + in_b) as f64).sqrt();
    let draw = |rng: &mut vfl_core::party::PartyRng, rows: usize, h: f64| -> FxTensor {
        let v: Vec<f64> = (0..rows * out).map(|_| rng.gen_range(-h..=h)).collect();
        FxTensor::from_f64(rows, out, &v, 40, &fx).unwrap()
    };
    let mut rb = derive_rng(SEED_B, &format!("init/{name}"));
    let mut wb = draw(&mut rb, in_b, h / 2f64.sqrt());
    let mut wa = Vec::new();
    for (i, &n) in in_a.iter().enumerate() {
        let from_b = draw(&mut rb, n, h / 2f64.sqrt());
        let mut ra = derive_rng(member_seed(i + 1), &format!("init/{name}"));
        wa.push(draw(&mut ra, n, h / 2f64.sqrt()).add(&from_b).unwrap());
        wb = wb.add(&draw(&mut ra, in_b, h / (2.0 * m as f64).sqrt())).unwrap();
    }
    (wa, wb)
}

/// Members and B of one multiparty layer run, with B's outputs and both sides' transcripts.
pub struct MultiRun {
    pub b: MultiPartyB,
    pub members: Vec<MultiPartyMember>,
    pub zs: Vec<FxTensor>,
    pub tas: Vec<Transcript>,
    pub tbs: Vec<Transcript>,
}

/// Init, then one forward/backward per gradient.
pub fn run_multiparty(cfg: MultiPartyConfig, xs: Vec<FxTensor>, xb: FxTensor, grads: Vec<FxTensor>) -> MultiRun {
    let m = cfg.parties();
    let seeds: Vec<SeedSource> = (1..=m).map(|i| SeedSource::Fixed(member_seed(i))).collect();
    let k = grads.len();
    let cb = cfg.clone();
    let (members, (b, zs, tbs)) = run_local_star(
        session_cfg(),
        SeedSource::Fixed(SEED_B),
        &seeds,
        |index, s| {
            let mut l = MultiPartyMember::init(s, &cfg)?;
            for _ in 0..k {
                l.forward(s, &xs[index as usize - 1])?;
                l.backward(s)?;
            }
            Ok((l, s.take_transcript()))
        },
        move |ss| {
            let mut l = MultiPartyB::init(ss, cb)?;
            let mut zs = Vec::new();
            for g in &grads {
                zs.push(l.forward(ss, &xb)?);
                l.backward(ss, g)?;
            }
            Ok((l, zs, ss.iter_mut().map(|s| s.take_transcript()).collect::<Vec<_>>()))
        },
    )
    .unwrap();
    let (members, tas) = members.into_iter().unzip();
    MultiRun { b, members, zs, tas, tbs }
}

/// `(W_A(1..M), W_B)`.
pub fn restore_multiparty(r: &MultiRun) -> (Vec<FxTensor>, FxTensor) {
    let wa = r.members.iter().enumerate().map(|(i, l)| l.layer().u().add(r.b.v_peer(i as u8 + 1)).unwrap()).collect();
    let wb = r.members.iter().fold(r.b.u().clone(), |acc, l| acc.add(l.layer().v_peer()).unwrap());
    (wa, wb)
}
