//! MatMul with `M` feature parties `A(1..M)` and B as the hub of a star.
//! `W_A(i) = U_A(i) + V_A(i)` as in the two-party layer and
//! `W_B = U_B + sum_i V_B(i)`, with `V_B(i)` held by `A(i)`.
//!
//! Each iteration B runs the two-party forward against every `A(i)` in
//! index order, feeding it an even split of `U_B`, and sums the results.
//! Backward encrypts `eta * dL/dZ` once and sends it to every member.

use crate::error::{Error, Result};
use crate::fixed::FixedConfig;
use crate::party::PartyId;
use crate::tensor::{CipherTensor, FxTensor};
use crate::transport::ProtocolSession;

use super::matmul::{
    forward_link, grad_he2ss_recv, init_link, refresh_peer_cache, ForwardContext, Link, MatMulConfig, MatMulLayer,
};
use super::{check_features, ceil_log2, encode_matrix, product_bits, CacheRefresh, FederatedOptimizer, Initializer, PieceBudget, Tags};

#[derive(Clone, Debug, PartialEq)]
pub struct MultiPartyConfig {
    pub name: String,
    /// Input width of each `A(i)`, in index order.
    pub in_a: Vec<usize>,
    pub in_b: usize,
    pub out: usize,
    /// `Constant` values are indexed by party tag: 0 is B, `i` is `A(i)`.
    pub init: Initializer,
    pub feature_bits: u32,
    pub momentum: f64,
}

impl MultiPartyConfig {
    pub fn new(name: &str, in_a: Vec<usize>, in_b: usize, out: usize) -> MultiPartyConfig {
        MultiPartyConfig { name: name.to_string(), in_a, in_b, out, init: Initializer::Uniform, feature_bits: 8, momentum: 0.9 }
    }

    pub fn parties(&self) -> usize {
        self.in_a.len()
    }

    /// `1/sqrt(fan_in)` over all parties' inputs.
    pub fn half_width(&self) -> f64 {
        1.0 / ((self.in_a.iter().sum::<usize>() + self.in_b).max(1) as f64).sqrt()
    }

    /// The two-party view of the link between B and `A(index)`.
    pub fn link_config(&self, index: u8) -> Result<MatMulConfig> {
        let in_a = *self
            .in_a
            .get((index as usize).wrapping_sub(1))
            .ok_or_else(|| Error::Config(format!("no party A{index} in a {}-party layer", self.parties())))?;
        Ok(MatMulConfig {
            name: self.name.clone(),
            in_a,
            in_b: self.in_b,
            out: self.out,
            init: self.init.clone(),
            feature_bits: self.feature_bits,
            momentum: self.momentum,
            refresh: CacheRefresh::Reencrypt,
        })
    }

    fn tags(index: u8) -> Tags {
        Tags::new("mp.mm", &format!(".{index}"))
    }

    /// `U_B` sums `M + 1` contributions instead of two.
    fn extra_budget_bits(&self) -> u32 {
        ceil_log2(self.parties())
    }
}

/// B's half: `U_B` and one link per member.
#[derive(Clone, Debug)]
pub struct MultiPartyB {
    cfg: MultiPartyConfig,
    fx: FixedConfig,
    opt: FederatedOptimizer,
    u: FxTensor,
    vel_u: FxTensor,
    links: Vec<Link>,
    budget: PieceBudget,
    ctx: Option<(FxTensor, Vec<ForwardContext>)>,
}

fn check_sessions(sessions: &[ProtocolSession], m: usize) -> Result<()> {
    if sessions.len() != m {
        return Err(Error::Config(format!("{} sessions for {m} A-parties", sessions.len())));
    }
    for (i, s) in sessions.iter().enumerate() {
        if !s.me().is_b() || s.peer() != PartyId::a(i as u8 + 1) {
            return Err(Error::Config(format!("session {i} is {} -> {}, expected B -> A{}", s.me(), s.peer(), i + 1)));
        }
    }
    Ok(())
}

impl MultiPartyB {
    /// `sessions[i]` links B with `A(i + 1)`.
    pub fn init(sessions: &mut [ProtocolSession], cfg: MultiPartyConfig) -> Result<MultiPartyB> {
        let m = cfg.parties();
        if m == 0 || cfg.out == 0 {
            return Err(Error::Config(format!("multi-party layer `{}` has an empty dimension", cfg.name)));
        }
        check_sessions(sessions, m)?;
        let fx = *sessions[0].fixed();
        let opt = FederatedOptimizer::new(cfg.momentum, &fx)?;
        let scale = 2 * fx.frac_bits;
        let hw = cfg.half_width();
        let mut rng = sessions[0].derived_rng(&format!("init/{}", cfg.name));
        let own = cfg.init.contribution(&mut rng, PartyId::B, true, cfg.in_b, cfg.out, hw, m)?;
        let mut u = encode_matrix(&fx, cfg.in_b, cfg.out, &own, scale)?;
        let mut peer_c = Vec::with_capacity(m);
        for (i, &in_a) in cfg.in_a.iter().enumerate() {
            let c = cfg.init.contribution(&mut rng, PartyId::a(i as u8 + 1), false, in_a, cfg.out, hw, 1)?;
            peer_c.push(encode_matrix(&fx, in_a, cfg.out, &c, scale)?);
        }
        let mut links = Vec::with_capacity(m);
        for (i, (s, c)) in sessions.iter_mut().zip(&peer_c).enumerate() {
            let (received, link) = init_link(s, MultiPartyConfig::tags(i as u8 + 1), c)?;
            u = u.add(&received)?;
            links.push(link);
        }
        let mut budget = PieceBudget::new(&fx, cfg.momentum);
        budget.init_bits += cfg.extra_budget_bits();
        Ok(MultiPartyB { vel_u: FxTensor::zeros(u.rows(), u.cols(), u.scale()), cfg, fx, opt, u, links, budget, ctx: None })
    }

    fn bound(&self, index: usize) -> u32 {
        let x_bits = self.fx.frac_bits + self.cfg.feature_bits;
        product_bits(self.budget.bits(), x_bits, self.cfg.in_a[index].max(self.cfg.in_b)) + 1
    }

    /// Runs every link's forward and returns `Z` at scale `3F`.
    pub fn forward(&mut self, sessions: &mut [ProtocolSession], x: &FxTensor) -> Result<FxTensor> {
        check_sessions(sessions, self.cfg.parties())?;
        check_features(x, &self.fx, self.cfg.feature_bits, self.cfg.in_b)?;
        self.budget.check("U_B", &self.u)?;
        for l in &self.links {
            self.budget.check("V", &l.v_peer)?;
        }
        let parts = self.u.split_even(self.cfg.parties());
        let mut z: Option<FxTensor> = None;
        let mut ctxs = Vec::with_capacity(parts.len());
        for (i, (s, part)) in sessions.iter_mut().zip(&parts).enumerate() {
            let ctx = forward_link(s, &self.links[i], x, part, self.bound(i))?;
            let other = s.recv_blinded(&self.links[i].tags.t("fw.zshare"))?;
            if other.shape() != ctx.z_piece.shape() {
                return Err(Error::Shape(format!("A{} batch {:?} vs {:?}", i + 1, other.shape(), ctx.z_piece.shape())));
            }
            let zi = ctx.z_piece.add(&other)?;
            z = Some(match z {
                None => zi,
                Some(acc) => acc.add(&zi)?,
            });
            ctxs.push(ctx);
        }
        self.ctx = Some((x.clone(), ctxs));
        Ok(z.expect("at least one party"))
    }

    /// `g` is `eta * dL/dZ` at scale `F`.
    pub fn backward(&mut self, sessions: &mut [ProtocolSession], g: &FxTensor) -> Result<()> {
        check_sessions(sessions, self.cfg.parties())?;
        let (x, ctxs) = self.ctx.take().ok_or_else(|| Error::State(format!("backward before forward in layer `{}`", self.cfg.name)))?;
        if g.scale() != self.fx.frac_bits {
            return Err(Error::Scale(self.fx.frac_bits, g.scale()));
        }
        if g.shape() != (x.rows(), self.cfg.out) {
            return Err(Error::Shape(format!("gradient {:?}, expected ({}, {})", g.shape(), x.rows(), self.cfg.out)));
        }
        let keys = sessions[0].shared_keys();
        let enc = CipherTensor::encrypt_own(&keys, g, sessions[0].rng())?;
        for (s, l) in sessions.iter_mut().zip(&self.links) {
            s.send_cipher(&l.tags.t("bw.encgrad"), &enc)?;
        }
        let gw_b = x.matmul_t(g)?;
        self.opt.step(&mut self.u, &mut self.vel_u, &gw_b)?;
        for (s, l) in sessions.iter_mut().zip(self.links.iter_mut()) {
            let delta = grad_he2ss_recv(s, &l.tags.t("bw.he2ss.gradA"))?;
            self.opt.step(&mut l.v_peer, &mut l.vel_v, &delta)?;
            refresh_peer_cache(s, l, CacheRefresh::Reencrypt, &l.tags.t("bw.refresh.V"))?;
        }
        self.budget.step();
        self.ctx = Some((x, ctxs));
        Ok(())
    }

    pub fn config(&self) -> &MultiPartyConfig {
        &self.cfg
    }

    pub fn u(&self) -> &FxTensor {
        &self.u
    }

    /// B's piece `V_A(index)` of `W_A(index)`.
    pub fn v_peer(&self, index: u8) -> &FxTensor {
        &self.links[index as usize - 1].v_peer
    }

    /// `[[V_B(index)]]` under `A(index)`'s key.
    pub fn enc_v_own(&self, index: u8) -> &CipherTensor {
        &self.links[index as usize - 1].enc_v_own
    }

    pub fn budget(&self) -> &PieceBudget {
        &self.budget
    }
}

/// The half of `A(i)`: a two-party layer on its link with B.
#[derive(Clone, Debug)]
pub struct MultiPartyMember {
    layer: MatMulLayer,
}

impl MultiPartyMember {
    pub fn init(s: &mut ProtocolSession, cfg: &MultiPartyConfig) -> Result<MultiPartyMember> {
        let index = s.me().tag();
        if s.me().is_b() || !s.peer().is_b() {
            return Err(Error::Config("members run as A(i) linked to B".into()));
        }
        let link_cfg = cfg.link_config(index)?;
        let mut layer = MatMulLayer::init_with(s, link_cfg, MultiPartyConfig::tags(index), cfg.half_width(), cfg.parties())?;
        layer.widen_budget(cfg.extra_budget_bits());
        Ok(MultiPartyMember { layer })
    }

    pub fn forward(&mut self, s: &mut ProtocolSession, x: &FxTensor) -> Result<()> {
        self.layer.forward(s, x).map(|_| ())
    }

    pub fn backward(&mut self, s: &mut ProtocolSession) -> Result<()> {
        self.layer.backward(s, None)
    }

    /// `U_A(i)`, `V_B(i)` and the cache live in the underlying layer.
    pub fn layer(&self) -> &MatMulLayer {
        &self.layer
    }
}
