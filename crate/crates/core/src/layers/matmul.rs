//! The MatMul source layer: `Z = X_A W_A + X_B W_B` with every weight
//! split as `W = U + V`, `U` held by the owner and `V` by the peer.
//!
//! Scales: features at `F`, weight pieces at `2F`, products at `3F`. The
//! learning rate is folded into the gradient by B, so weight gradients land
//! at `2F` without any interactive truncation.

use crate::error::{Error, Result};
use crate::fixed::FixedConfig;
use crate::party::{PartyId, SeedSource};
use crate::shares::{he2ss_recv, he2ss_send, mask_tensor, sends_first, ss2he};
use crate::tensor::{CipherTensor, FxTensor};
use crate::transport::ProtocolSession;

use super::{
    check_features, encode_matrix, product_bits, CacheRefresh, CheckpointReader, CheckpointWriter,
    FederatedOptimizer, Initializer, PieceBudget, Tags,
};

#[derive(Clone, Debug, PartialEq)]
pub struct MatMulConfig {
    /// Names the initializer stream `init/<name>`.
    pub name: String,
    pub in_a: usize,
    pub in_b: usize,
    pub out: usize,
    pub init: Initializer,
    /// Public bound `|x| < 2^feature_bits` on every feature value.
    pub feature_bits: u32,
    pub momentum: f64,
    pub refresh: CacheRefresh,
}

impl MatMulConfig {
    pub fn new(name: &str, in_a: usize, in_b: usize, out: usize) -> MatMulConfig {
        MatMulConfig {
            name: name.to_string(),
            in_a,
            in_b,
            out,
            init: Initializer::Uniform,
            feature_bits: 8,
            momentum: 0.9,
            refresh: CacheRefresh::Auto,
        }
    }

    pub fn in_of(&self, p: PartyId) -> usize {
        if p.is_b() {
            self.in_b
        } else {
            self.in_a
        }
    }

    /// Half-width of the logical uniform initializer, `1/sqrt(fan_in)`.
    pub fn half_width(&self) -> f64 {
        1.0 / ((self.in_a + self.in_b).max(1) as f64).sqrt()
    }

    /// Logical initial `(W_A, W_B)` at `2F`, replayed from both seeds.
    pub fn replay_init(&self, seed_a: SeedSource, seed_b: SeedSource, fx: &FixedConfig) -> Result<(FxTensor, FxTensor)> {
        self.validate()?;
        let (a, b) = (PartyId::A, PartyId::B);
        let hw = self.half_width();
        let scale = 2 * fx.frac_bits;
        let mut ra = seed_a.rng(&format!("init/{}", self.name));
        let mut rb = seed_b.rng(&format!("init/{}", self.name));
        let a_own = self.init.contribution(&mut ra, a, true, self.in_a, self.out, hw, 1)?;
        let a_peer = self.init.contribution(&mut ra, b, false, self.in_b, self.out, hw, 1)?;
        let b_own = self.init.contribution(&mut rb, b, true, self.in_b, self.out, hw, 1)?;
        let b_peer = self.init.contribution(&mut rb, a, false, self.in_a, self.out, hw, 1)?;
        let enc = |v: &[f64], rows| encode_matrix(fx, rows, self.out, v, scale);
        Ok((enc(&a_own, self.in_a)?.add(&enc(&b_peer, self.in_a)?)?, enc(&b_own, self.in_b)?.add(&enc(&a_peer, self.in_b)?)?))
    }

    fn validate(&self) -> Result<()> {
        if self.out == 0 || self.in_a + self.in_b == 0 {
            return Err(Error::Config(format!("matmul layer `{}` has an empty dimension", self.name)));
        }
        Ok(())
    }
}

/// One side of a two-party link: the plaintext piece of the peer's weights
/// held here and the encrypted cache of this party's own piece held by the
/// peer. Shared by the two-party, adapter and multi-party layers.
#[derive(Clone, Debug)]
pub(crate) struct Link {
    pub(crate) tags: Tags,
    pub(crate) v_peer: FxTensor,
    pub(crate) vel_v: FxTensor,
    /// `[[V_own]]` under the peer's key.
    pub(crate) enc_v_own: CipherTensor,
}

/// Runs `send` then `recv` if this party transmits first, else the reverse.
pub(crate) fn exchange<T>(
    s: &mut ProtocolSession,
    send: impl FnOnce(&mut ProtocolSession) -> Result<()>,
    recv: impl FnOnce(&mut ProtocolSession) -> Result<T>,
) -> Result<T> {
    if sends_first(s.me()) {
        send(s)?;
        recv(s)
    } else {
        let t = recv(s)?;
        send(s)?;
        Ok(t)
    }
}

pub(crate) fn expect_owner(c: &CipherTensor, owner: PartyId) -> Result<()> {
    if c.owner() != owner {
        return Err(Error::KeyMismatch { expected: owner, found: c.owner() });
    }
    Ok(())
}

/// Init over one link. `peer_c` is this party's contribution to the peer's
/// weights; it leaves blinded by the freshly drawn piece `V_peer`. Returns
/// the peer's blinded contribution to this party's weights and the link.
pub(crate) fn init_link(s: &mut ProtocolSession, tags: Tags, peer_c: &FxTensor) -> Result<(FxTensor, Link)> {
    let cfg = *s.fixed();
    let v_peer = mask_tensor(&cfg, peer_c.rows(), peer_c.cols(), peer_c.scale(), cfg.vmax_bits, s.rng());
    let blinded = peer_c.sub(&v_peer)?;
    let (me, peer) = (s.me(), s.peer());
    let received = exchange(
        s,
        |s| s.send_blinded(&tags.t(&format!("init.share.{me}")), &blinded),
        |s| s.recv_blinded(&tags.t(&format!("init.share.{peer}"))),
    )?;
    let keys = s.shared_keys();
    let enc = CipherTensor::encrypt_own(&keys, &v_peer, s.rng())?;
    let enc_v_own = exchange(
        s,
        |s| s.send_cipher(&tags.t(&format!("init.encV.{me}")), &enc),
        |s| s.recv_cipher(&tags.t(&format!("init.encV.{peer}"))),
    )?;
    expect_owner(&enc_v_own, peer)?;
    let vel_v = FxTensor::zeros(v_peer.rows(), v_peer.cols(), v_peer.scale());
    Ok((received, Link { tags, v_peer, vel_v, enc_v_own }))
}

/// Per-iteration plaintext values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardContext {
    pub x: FxTensor,
    /// Mask kept from this party's he2ss of `X V_own`.
    pub eps: FxTensor,
    /// Blinded `X_peer V_peer - eps_peer` received from the peer.
    pub received: FxTensor,
    /// `X U + eps + received`.
    pub z_piece: FxTensor,
}

/// Both he2ss exchanges of the forward pass over one link, then the local
/// piece `X U + eps + received`.
pub(crate) fn forward_link(
    s: &mut ProtocolSession,
    link: &Link,
    x: &FxTensor,
    u: &FxTensor,
    bound_bits: u32,
) -> Result<ForwardContext> {
    let peer_pk = s.peer_pk().clone();
    let xv = CipherTensor::pc_matmul(&peer_pk, x, &link.enc_v_own)?;
    let (me, peer) = (s.me(), s.peer());
    let mut eps = None;
    let received = exchange(
        s,
        |s| {
            eps = Some(he2ss_send(s, &link.tags.t(&format!("fw.he2ss.{me}")), &xv, bound_bits)?.0);
            Ok(())
        },
        |s| he2ss_recv(s, &link.tags.t(&format!("fw.he2ss.{peer}")), bound_bits),
    )?;
    let eps = eps.expect("send ran");
    let z_piece = x.matmul(u)?.add(&eps)?.add(&received)?;
    Ok(ForwardContext { x: x.clone(), eps, received, z_piece })
}

/// `[[X^T G]]` under the peer's key, converted to shares; this party keeps
/// the mask. Returns `(mask, sent ciphertext)`.
pub(crate) fn grad_he2ss_send(
    s: &mut ProtocolSession,
    tag: &str,
    x: &FxTensor,
    enc_g: &CipherTensor,
) -> Result<(FxTensor, CipherTensor)> {
    let peer_pk = s.peer_pk().clone();
    let gw = CipherTensor::pc_matmul_t(&peer_pk, x, enc_g)?;
    let vmax = s.fixed().vmax_bits;
    he2ss_send(s, tag, &gw, vmax)
}

pub(crate) fn grad_he2ss_recv(s: &mut ProtocolSession, tag: &str) -> Result<FxTensor> {
    let vmax = s.fixed().vmax_bits;
    he2ss_recv(s, tag, vmax)
}

/// Owner side of a cache refresh after the peer updated `V_own`.
pub(crate) fn refresh_own_cache(
    s: &mut ProtocolSession,
    link: &mut Link,
    policy: CacheRefresh,
    sent: &CipherTensor,
    tag: &str,
) -> Result<()> {
    match policy {
        CacheRefresh::Homomorphic => {
            let pk = s.peer_pk().clone();
            link.enc_v_own = link.enc_v_own.sub(&pk, sent)?;
        }
        _ => {
            let c = s.recv_cipher(tag)?;
            expect_owner(&c, s.peer())?;
            link.enc_v_own = c;
        }
    }
    Ok(())
}

/// Holder side of a cache refresh after updating `V_peer`.
pub(crate) fn refresh_peer_cache(s: &mut ProtocolSession, link: &Link, policy: CacheRefresh, tag: &str) -> Result<()> {
    if policy == CacheRefresh::Reencrypt {
        let keys = s.shared_keys();
        let enc = CipherTensor::encrypt_own(&keys, &link.v_peer, s.rng())?;
        s.send_cipher(tag, &enc)?;
    }
    Ok(())
}

/// One party's half of a two-party MatMul layer.
#[derive(Clone, Debug)]
pub struct MatMulLayer {
    cfg: MatMulConfig,
    fx: FixedConfig,
    me: PartyId,
    refresh: CacheRefresh,
    opt: FederatedOptimizer,
    u: FxTensor,
    vel_u: FxTensor,
    link: Link,
    budget: PieceBudget,
    ctx: Option<ForwardContext>,
    /// Plaintext values received or derived during the last backward pass.
    last_backward: Vec<(String, FxTensor)>,
}

impl MatMulLayer {
    /// Initialization protocol. Both parties call this with equal configs.
    pub fn init(s: &mut ProtocolSession, cfg: MatMulConfig) -> Result<MatMulLayer> {
        MatMulLayer::init_tagged(s, cfg, "mm")
    }

    pub(crate) fn init_tagged(s: &mut ProtocolSession, cfg: MatMulConfig, prefix: &str) -> Result<MatMulLayer> {
        let hw = cfg.half_width();
        MatMulLayer::init_with(s, cfg, Tags::new(prefix, ""), hw, 1)
    }

    /// Init with explicit tags and initializer width. `peers` is the number
    /// of parties contributing to B's weights.
    pub(crate) fn init_with(
        s: &mut ProtocolSession,
        cfg: MatMulConfig,
        tags: Tags,
        hw: f64,
        peers: usize,
    ) -> Result<MatMulLayer> {
        cfg.validate()?;
        let fx = *s.fixed();
        let refresh = cfg.refresh.resolve(cfg.momentum)?;
        let opt = FederatedOptimizer::new(cfg.momentum, &fx)?;
        let (me, peer) = (s.me(), s.peer());
        let (in_me, in_peer) = (cfg.in_of(me), cfg.in_of(peer));
        let mut rng = s.derived_rng(&format!("init/{}", cfg.name));
        let peers_of = |p: PartyId| if p.is_b() { peers } else { 1 };
        let own = cfg.init.contribution(&mut rng, me, true, in_me, cfg.out, hw, peers_of(me))?;
        let other = cfg.init.contribution(&mut rng, peer, false, in_peer, cfg.out, hw, peers_of(peer))?;
        let own = encode_matrix(&fx, in_me, cfg.out, &own, 2 * fx.frac_bits)?;
        let other = encode_matrix(&fx, in_peer, cfg.out, &other, 2 * fx.frac_bits)?;
        let (received, link) = init_link(s, tags, &other)?;
        let u = own.add(&received)?;
        let vel_u = FxTensor::zeros(u.rows(), u.cols(), u.scale());
        let budget = PieceBudget::new(&fx, cfg.momentum);
        Ok(MatMulLayer { cfg, fx, me, refresh, opt, u, vel_u, link, budget, ctx: None, last_backward: Vec::new() })
    }

    fn forward_bound(&self) -> u32 {
        let x_bits = self.fx.frac_bits + self.cfg.feature_bits;
        product_bits(self.budget.bits(), x_bits, self.cfg.in_a.max(self.cfg.in_b)) + 1
    }

    fn start_forward(&mut self, s: &mut ProtocolSession, x: &FxTensor) -> Result<()> {
        check_features(x, &self.fx, self.cfg.feature_bits, self.cfg.in_of(self.me))?;
        self.budget.check("U", &self.u)?;
        self.budget.check("V", &self.link.v_peer)?;
        let bound = self.forward_bound();
        self.ctx = Some(forward_link(s, &self.link, x, &self.u, bound)?);
        Ok(())
    }

    /// Forward protocol. B receives `Some(Z)` at scale `3F`; A gets `None`.
    pub fn forward(&mut self, s: &mut ProtocolSession, x: &FxTensor) -> Result<Option<FxTensor>> {
        self.start_forward(s, x)?;
        let ctx = self.ctx.as_ref().expect("set");
        let tag = self.link.tags.t("fw.zshare");
        if !self.me.is_b() {
            s.send_blinded(&tag, &ctx.z_piece)?;
            return Ok(None);
        }
        let other = s.recv_blinded(&tag)?;
        if other.shape() != ctx.z_piece.shape() {
            return Err(Error::Shape(format!("peer batch {:?} vs {:?}", other.shape(), ctx.z_piece.shape())));
        }
        Ok(Some(ctx.z_piece.add(&other)?))
    }

    /// Forward without the final combine: each party keeps its piece of `Z`.
    pub(crate) fn forward_shared(&mut self, s: &mut ProtocolSession, x: &FxTensor) -> Result<FxTensor> {
        self.start_forward(s, x)?;
        Ok(self.ctx.as_ref().expect("set").z_piece.clone())
    }

    fn take_ctx(&mut self) -> Result<ForwardContext> {
        self.ctx.take().ok_or_else(|| Error::State(format!("backward before forward in layer `{}`", self.cfg.name)))
    }

    fn check_grad(&self, g: &FxTensor, ctx: &ForwardContext) -> Result<()> {
        if g.scale() != self.fx.frac_bits {
            return Err(Error::Scale(self.fx.frac_bits, g.scale()));
        }
        if g.shape() != (ctx.x.rows(), self.cfg.out) {
            return Err(Error::Shape(format!("gradient {:?}, expected ({}, {})", g.shape(), ctx.x.rows(), self.cfg.out)));
        }
        Ok(())
    }

    /// Backward protocol. B passes `Some(eta * dL/dZ)` at scale `F`; A passes
    /// `None`.
    pub fn backward(&mut self, s: &mut ProtocolSession, grad: Option<&FxTensor>) -> Result<()> {
        let ctx = self.take_ctx()?;
        let tags = self.link.tags.clone();
        let mut log = Vec::new();
        if self.me.is_b() {
            let g = grad.ok_or_else(|| Error::State("party B must supply the gradient".into()))?;
            self.check_grad(g, &ctx)?;
            let keys = s.shared_keys();
            let enc = CipherTensor::encrypt_own(&keys, g, s.rng())?;
            s.send_cipher(&tags.t("bw.encgrad"), &enc)?;
            let gw_b = ctx.x.matmul_t(g)?;
            self.opt.step(&mut self.u, &mut self.vel_u, &gw_b)?;
            let delta = grad_he2ss_recv(s, &tags.t("bw.he2ss.gradA"))?;
            self.opt.step(&mut self.link.v_peer, &mut self.link.vel_v, &delta)?;
            refresh_peer_cache(s, &self.link, self.refresh, &tags.t("bw.refresh.V"))?;
            log.push(("grad_Z_eta".to_string(), g.clone()));
            log.push(("grad_WB_eta".to_string(), gw_b));
            log.push(("delta_A".to_string(), delta));
        } else {
            let enc_g = s.recv_cipher(&tags.t("bw.encgrad"))?;
            expect_owner(&enc_g, s.peer())?;
            let (phi, sent) = grad_he2ss_send(s, &tags.t("bw.he2ss.gradA"), &ctx.x, &enc_g)?;
            self.opt.step(&mut self.u, &mut self.vel_u, &phi)?;
            refresh_own_cache(s, &mut self.link, self.refresh, &sent, &tags.t("bw.refresh.V"))?;
            log.push(("phi_A".to_string(), phi));
        }
        self.budget.step();
        self.ctx = Some(ctx);
        self.last_backward = log;
        Ok(())
    }

    /// Backward from shared `eta * dL/dZ` pieces: both parties convert the
    /// gradient to ciphertext under the peer's key and each weight gradient
    /// is shared back, A's first.
    pub(crate) fn backward_shared(&mut self, s: &mut ProtocolSession, g_piece: &FxTensor) -> Result<()> {
        let ctx = self.take_ctx()?;
        self.check_grad(g_piece, &ctx)?;
        let tags = self.link.tags.clone();
        let (me, peer) = (s.me(), s.peer());
        let enc_g = ss2he(s, &tags.t("bw.ss2he"), g_piece)?;
        let mut sent = None;
        let tag_own = tags.t(&format!("bw.he2ss.grad{me}"));
        let tag_peer = tags.t(&format!("bw.he2ss.grad{peer}"));
        let delta = exchange(
            s,
            |s| {
                sent = Some(grad_he2ss_send(s, &tag_own, &ctx.x, &enc_g)?);
                Ok(())
            },
            |s| grad_he2ss_recv(s, &tag_peer),
        )?;
        let (phi, sent) = sent.expect("send ran");
        self.opt.step(&mut self.u, &mut self.vel_u, &phi)?;
        self.opt.step(&mut self.link.v_peer, &mut self.link.vel_v, &delta)?;
        match self.refresh {
            CacheRefresh::Homomorphic => {
                let pk = s.peer_pk().clone();
                self.link.enc_v_own = self.link.enc_v_own.sub(&pk, &sent)?;
            }
            _ => {
                let keys = s.shared_keys();
                let enc = CipherTensor::encrypt_own(&keys, &self.link.v_peer, s.rng())?;
                let c = exchange(
                    s,
                    |s| s.send_cipher(&tags.t(&format!("bw.refresh.V.{me}")), &enc),
                    |s| s.recv_cipher(&tags.t(&format!("bw.refresh.V.{peer}"))),
                )?;
                expect_owner(&c, peer)?;
                self.link.enc_v_own = c;
            }
        }
        self.budget.step();
        self.last_backward = vec![("grad_piece".to_string(), g_piece.clone()), ("phi".to_string(), phi), ("delta".to_string(), delta)];
        self.ctx = Some(ctx);
        Ok(())
    }

    /// Adds bits to the initial piece budget, for weights assembled from
    /// more than two contributions.
    pub(crate) fn widen_budget(&mut self, extra: u32) {
        self.budget.init_bits += extra;
    }

    pub fn config(&self) -> &MatMulConfig {
        &self.cfg
    }

    pub fn party(&self) -> PartyId {
        self.me
    }

    /// This party's piece `U` of its own weights (scale `2F`).
    pub fn u(&self) -> &FxTensor {
        &self.u
    }

    /// This party's piece `V` of the peer's weights (scale `2F`).
    pub fn v_peer(&self) -> &FxTensor {
        &self.link.v_peer
    }

    /// Cached `[[V_own]]` under the peer's key.
    pub fn enc_v_own(&self) -> &CipherTensor {
        &self.link.enc_v_own
    }

    pub fn refresh_policy(&self) -> CacheRefresh {
        self.refresh
    }

    pub fn budget(&self) -> &PieceBudget {
        &self.budget
    }

    pub fn context(&self) -> Option<&ForwardContext> {
        self.ctx.as_ref()
    }

    /// Every plaintext tensor this party holds, for state scans.
    pub fn plaintext_state(&self) -> Vec<(String, FxTensor)> {
        let mut out = vec![
            ("U".to_string(), self.u.clone()),
            ("V_peer".to_string(), self.link.v_peer.clone()),
            ("vel_U".to_string(), self.vel_u.clone()),
            ("vel_V".to_string(), self.link.vel_v.clone()),
        ];
        if let Some(c) = &self.ctx {
            out.push(("eps".to_string(), c.eps.clone()));
            out.push(("received".to_string(), c.received.clone()));
            out.push(("z_piece".to_string(), c.z_piece.clone()));
        }
        out.extend(self.last_backward.iter().cloned());
        out
    }

    const MAGIC: &'static [u8] = b"VFLMM\x01";

    /// Serializes pieces, velocities, the encrypted cache and the budget.
    pub fn checkpoint(&self) -> Vec<u8> {
        let mut w = CheckpointWriter::new(Self::MAGIC);
        for t in [&self.u, &self.vel_u, &self.link.v_peer, &self.link.vel_v] {
            w.block(&t.to_wire());
        }
        w.block(&self.link.enc_v_own.to_wire());
        w.block(&self.budget.steps.to_be_bytes());
        w.finish()
    }

    /// Restores state saved by [`checkpoint`](Self::checkpoint) into a layer
    /// built with the same config.
    pub fn restore_checkpoint(&mut self, bytes: &[u8]) -> Result<()> {
        let mut r = CheckpointReader::new(bytes, Self::MAGIC)?;
        let u = FxTensor::from_wire(r.block()?)?;
        let vel_u = FxTensor::from_wire(r.block()?)?;
        let v_peer = FxTensor::from_wire(r.block()?)?;
        let vel_v = FxTensor::from_wire(r.block()?)?;
        let enc = CipherTensor::from_wire(r.block()?)?;
        let steps = r.u64()?;
        r.done()?;
        if u.shape() != self.u.shape() || v_peer.shape() != self.link.v_peer.shape() {
            return Err(Error::Shape("checkpoint does not match layer dimensions".into()));
        }
        expect_owner(&enc, self.link.enc_v_own.owner())?;
        self.u = u;
        self.vel_u = vel_u;
        self.link.v_peer = v_peer;
        self.link.vel_v = vel_v;
        self.link.enc_v_own = enc;
        self.budget.steps = steps;
        self.ctx = None;
        Ok(())
    }
}
