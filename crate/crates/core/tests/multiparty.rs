mod common;

use common::*;
use vfl_core::layers::{Initializer, MatMulConfig, MatMulLayer, MultiPartyConfig};
use vfl_core::party::SeedSource;
use vfl_core::tensor::FxTensor;
use vfl_core::transport::run_local;

#[test]
fn single_member_reduces_to_the_two_party_layer() {
    let (in_a, in_b, out, batch) = (3, 2, 2, 3);
    let xa = random_features(1, batch, in_a, 1.0, 1.0);
    let xb = random_features(2, batch, in_b, 1.0, 1.0);
    let grads = vec![random_features(3, batch, out, 0.05, 1.0); 2];
    let r = run_multiparty(MultiPartyConfig::new("t", vec![in_a], in_b, out), vec![xa.clone()], xb.clone(), grads.clone());
    let cfg = MatMulConfig::new("t", in_a, in_b, out);
    let ca = cfg.clone();
    let g2 = grads.clone();
    let ((a2, ta), (b2, zs, tb)) = run_local(
        session_cfg(),
        SeedSource::Fixed(SEED_A),
        SeedSource::Fixed(SEED_B),
        move |s| {
            let mut l = MatMulLayer::init(s, ca)?;
            for _ in 0..2 {
                l.forward(s, &xa)?;
                l.backward(s, None)?;
            }
            Ok((l, s.take_transcript()))
        },
        move |s| {
            let mut l = MatMulLayer::init(s, cfg)?;
            let mut zs = Vec::new();
            for g in &g2 {
                zs.push(l.forward(s, &xb)?.unwrap());
                l.backward(s, Some(g))?;
            }
            Ok((l, zs, s.take_transcript()))
        },
    )
    .unwrap();
    assert_eq!(r.zs, zs);
    assert_eq!(r.members[0].layer().u(), a2.u());
    assert_eq!(r.b.u(), b2.u());
    assert_eq!(r.b.v_peer(1), b2.v_peer());
    // same payload bytes in the same order; only the step tags differ
    assert_eq!(r.tas[0].payload_digest(), ta.payload_digest());
    assert_eq!(r.tbs[0].payload_digest(), tb.payload_digest());
    assert_ne!(r.tas[0].digest(), ta.digest());
}

#[test]
fn three_members_match_the_integer_oracle() {
    let (in_a, in_b, out, batch, k) = (vec![2, 3, 1], 2, 2, 3, 20);
    let cfg = MultiPartyConfig { momentum: 0.0, ..MultiPartyConfig::new("t", in_a.clone(), in_b, out) };
    let xs: Vec<FxTensor> = in_a.iter().enumerate().map(|(i, &n)| random_features(10 + i as u64, batch, n, 1.0, 0.8)).collect();
    let xb = random_features(20, batch, in_b, 1.0, 0.8);
    let grads: Vec<FxTensor> = (0..k).map(|i| random_features(300 + i, batch, out, 0.05, 1.0)).collect();
    let r = run_multiparty(cfg, xs.clone(), xb.clone(), grads.clone());
    let (mut wa, mut wb) = replay_multiparty_init("t", &in_a, in_b, out);
    for (step, g) in grads.iter().enumerate() {
        let z = xs.iter().zip(&wa).fold(xb.matmul(&wb).unwrap(), |acc, (x, w)| acc.add(&x.matmul(w).unwrap()).unwrap());
        assert_eq!(r.zs[step].raw(), z.raw(), "forward {step}");
        for (x, w) in xs.iter().zip(wa.iter_mut()) {
            *w = w.sub(&x.matmul_t(g).unwrap()).unwrap();
        }
        wb = wb.sub(&xb.matmul_t(g).unwrap()).unwrap();
    }
    assert_eq!(restore_multiparty(&r), (wa, wb));
    // star topology: every member only ever talks on its own tags
    for (i, t) in r.tas.iter().enumerate() {
        assert!(t.entries.iter().skip(4).all(|e| e.message.step_tag.ends_with(&format!(".{}", i + 1))));
    }
}

#[test]
fn zero_initializer_and_zero_gradient() {
    let cfg = MultiPartyConfig { init: Initializer::Zeros, momentum: 0.0, ..MultiPartyConfig::new("t", vec![1, 2], 2, 1) };
    let xs = vec![random_features(1, 2, 1, 1.0, 1.0), random_features(2, 2, 2, 1.0, 1.0)];
    let r = run_multiparty(cfg, xs, random_features(3, 2, 2, 1.0, 1.0), vec![FxTensor::zeros(2, 1, 20); 2]);
    assert!(r.zs.iter().all(|z| z.is_zero()));
    let (wa, wb) = restore_multiparty(&r);
    assert!(wa.iter().all(|w| w.is_zero()) && wb.is_zero());
}

#[test]
fn caches_match_the_held_pieces() {
    let r = run_multiparty(
        MultiPartyConfig::new("t", vec![1, 1], 1, 1),
        vec![random_features(1, 2, 1, 1.0, 1.0), random_features(2, 2, 1, 1.0, 1.0)],
        random_features(3, 2, 1, 1.0, 1.0),
        vec![random_features(4, 2, 1, 0.1, 1.0)],
    );
    let kb = keys(vfl_core::party::PartyId::B, SEED_B);
    for (i, l) in r.members.iter().enumerate() {
        let index = i as u8 + 1;
        let ka = keys(vfl_core::party::PartyId::a(index), member_seed(i + 1));
        assert_eq!(l.layer().enc_v_own().decrypt(&kb).unwrap().raw(), r.b.v_peer(index).raw());
        assert_eq!(r.b.enc_v_own(index).decrypt(&ka).unwrap().raw(), l.layer().v_peer().raw());
    }
}
