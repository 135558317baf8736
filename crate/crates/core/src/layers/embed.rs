//! The Embed-MatMul source layer: `Z = lkup(Q_A, X_A) W_A + lkup(Q_B, X_B) W_B`
//! for one categorical field per party. Tables split as `Q = S + T` and
//! weights as `W = U + V`; `S`, `U` stay with the owner, `T`, `V` with the
//! peer. Each party also caches `[[T_own]]`, `[[U_peer]]`, `[[V_own]]`
//! under the peer's key.
//!
//! Scales: table and weight pieces at `2F`, lookup shares at `2F`, the
//! stage-two products and `Z` at `4F`. Gradients land at `3F` and each
//! party floors its own piece by `F` before the update.

use crate::error::{Error, Result};
use crate::fixed::FixedConfig;
use crate::party::{PartyId, SeedSource};
use crate::shares::{he2ss_recv, he2ss_send, mask_tensor, ss2he};
use crate::tensor::{CipherTensor, FxTensor};
use crate::transport::ProtocolSession;

use super::matmul::{exchange, expect_owner};
use super::{
    ceil_log2, encode_matrix, CheckpointReader, CheckpointWriter, FederatedOptimizer, Initializer, PieceBudget,
    Tags,
};

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedConfig {
    /// Names the initializer stream `init/<name>`.
    pub name: String,
    pub vocab_a: usize,
    pub vocab_b: usize,
    pub dim: usize,
    pub out: usize,
    /// Tables and weights share one initializer. `Constant` values are
    /// laid out per party as the table (row-major) followed by the weights.
    pub init: Initializer,
    pub momentum: f64,
}

impl EmbedConfig {
    pub fn new(name: &str, vocab_a: usize, vocab_b: usize, dim: usize, out: usize) -> EmbedConfig {
        EmbedConfig { name: name.to_string(), vocab_a, vocab_b, dim, out, init: Initializer::Uniform, momentum: 0.9 }
    }

    pub fn vocab_of(&self, p: PartyId) -> usize {
        if p.is_b() {
            self.vocab_b
        } else {
            self.vocab_a
        }
    }

    pub fn table_half_width(&self) -> f64 {
        1.0 / (self.dim as f64).sqrt()
    }

    /// `1/sqrt(fan_in)` with both parties' embeddings feeding `Z`.
    pub fn weight_half_width(&self) -> f64 {
        1.0 / ((2 * self.dim) as f64).sqrt()
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_a == 0 || self.vocab_b == 0 || self.dim == 0 || self.out == 0 {
            return Err(Error::Config(format!("embed layer `{}` has an empty dimension", self.name)));
        }
        Ok(())
    }

    /// Logical initial `[Q_A, W_A, Q_B, W_B]` at `2F`, replayed from both seeds.
    pub fn replay_init(&self, seed_a: SeedSource, seed_b: SeedSource, fx: &FixedConfig) -> Result<[FxTensor; 4]> {
        self.validate()?;
        let scale = 2 * fx.frac_bits;
        let mut out = Vec::with_capacity(4);
        let mut ra = seed_a.rng(&format!("init/{}", self.name));
        let mut rb = seed_b.rng(&format!("init/{}", self.name));
        let (a_t, a_w) = self.contributions(&mut ra, PartyId::A, true)?;
        let (a_pt, a_pw) = self.contributions(&mut ra, PartyId::B, false)?;
        let (b_t, b_w) = self.contributions(&mut rb, PartyId::B, true)?;
        let (b_pt, b_pw) = self.contributions(&mut rb, PartyId::A, false)?;
        for (own, other, rows, cols) in [
            (a_t, b_pt, self.vocab_a, self.dim),
            (a_w, b_pw, self.dim, self.out),
            (b_t, a_pt, self.vocab_b, self.dim),
            (b_w, a_pw, self.dim, self.out),
        ] {
            out.push(encode_matrix(fx, rows, cols, &own, scale)?.add(&encode_matrix(fx, rows, cols, &other, scale)?)?);
        }
        Ok(out.try_into().expect("four tensors"))
    }

    /// One party's contributions (table, weights) to tensors owned by `owner`.
    fn contributions(
        &self,
        rng: &mut crate::party::PartyRng,
        owner: PartyId,
        is_owner: bool,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let vocab = self.vocab_of(owner);
        let (tn, wn) = (vocab * self.dim, self.dim * self.out);
        if let Initializer::Constant(values) = &self.init {
            let v = values.get(owner.tag() as usize).cloned().unwrap_or_default();
            if !is_owner {
                return Ok((vec![0.0; tn], vec![0.0; wn]));
            }
            if v.len() != tn + wn {
                return Err(Error::Shape(format!("constant embed values for {owner}: {} values, need {}", v.len(), tn + wn)));
            }
            return Ok((v[..tn].to_vec(), v[tn..].to_vec()));
        }
        let t = self.init.contribution(rng, owner, is_owner, vocab, self.dim, self.table_half_width(), 1)?;
        let w = self.init.contribution(rng, owner, is_owner, self.dim, self.out, self.weight_half_width(), 1)?;
        Ok((t, w))
    }
}

/// Per-iteration plaintext values of one forward pass.
#[derive(Clone, Debug)]
pub struct EmbedForwardContext {
    pub idx: Vec<usize>,
    /// `psi_own = lkup(S_own) + mask`, this party's share of `E_own`.
    pub psi: FxTensor,
    /// `E_peer - psi_peer`, this party's share of the peer's lookup.
    pub comp: FxTensor,
    pub lkup_mask: FxTensor,
    pub eps: [FxTensor; 2],
    pub received: [FxTensor; 2],
    pub z_piece: FxTensor,
}

/// One party's half of an Embed-MatMul layer.
#[derive(Clone, Debug)]
pub struct EmbedMatMulLayer {
    cfg: EmbedConfig,
    fx: FixedConfig,
    me: PartyId,
    opt: FederatedOptimizer,
    tags: Tags,
    s_own: FxTensor,
    vel_s: FxTensor,
    t_peer: FxTensor,
    vel_t: FxTensor,
    u_own: FxTensor,
    vel_u: FxTensor,
    v_peer: FxTensor,
    vel_v: FxTensor,
    /// Caches under the peer's key.
    enc_t_own: CipherTensor,
    enc_u_peer: CipherTensor,
    enc_v_own: CipherTensor,
    budget: PieceBudget,
    ctx: Option<EmbedForwardContext>,
    last_backward: Vec<(String, FxTensor)>,
}

fn zeros_like(t: &FxTensor) -> FxTensor {
    FxTensor::zeros(t.rows(), t.cols(), t.scale())
}

/// Sends fresh `[[T_peer]], [[U_own]], [[V_peer]]` under this party's key
/// and returns the peer's, which become this party's caches
/// `[[T_own]], [[U_peer]], [[V_own]]`.
fn exchange_caches(
    s: &mut ProtocolSession,
    tags: &Tags,
    step: &str,
    held: [&FxTensor; 3],
) -> Result<[CipherTensor; 3]> {
    let keys = s.shared_keys();
    let mut enc = Vec::with_capacity(3);
    for t in held {
        enc.push(CipherTensor::encrypt_own(&keys, t, s.rng())?);
    }
    let (me, peer) = (s.me(), s.peer());
    let got = exchange(
        s,
        |s| {
            for (name, c) in ["T", "U", "V"].iter().zip(&enc) {
                s.send_cipher(&tags.t(&format!("{step}.{name}.{me}")), c)?;
            }
            Ok(())
        },
        |s| {
            let mut got = Vec::with_capacity(3);
            for name in ["T", "U", "V"] {
                let c = s.recv_cipher(&tags.t(&format!("{step}.{name}.{peer}")))?;
                expect_owner(&c, peer)?;
                got.push(c);
            }
            Ok(got)
        },
    )?;
    let [t, u, v]: [CipherTensor; 3] = got.try_into().expect("three caches");
    // the peer's T piece has this party's vocabulary; U and V are dim x out
    let (_, dim) = held[0].shape();
    if t.cols() != dim || u.shape() != held[1].shape() || v.shape() != held[2].shape() {
        return Err(Error::Shape("peer cache dimensions differ from the layer config".into()));
    }
    Ok([t, u, v])
}

impl EmbedMatMulLayer {
    pub fn init(s: &mut ProtocolSession, cfg: EmbedConfig) -> Result<EmbedMatMulLayer> {
        EmbedMatMulLayer::init_tagged(s, cfg, "em")
    }

    pub(crate) fn init_tagged(s: &mut ProtocolSession, cfg: EmbedConfig, prefix: &str) -> Result<EmbedMatMulLayer> {
        cfg.validate()?;
        let fx = *s.fixed();
        let opt = FederatedOptimizer::new(cfg.momentum, &fx)?;
        let tags = Tags::new(prefix, "");
        let (me, peer) = (s.me(), s.peer());
        let scale = 2 * fx.frac_bits;
        let mut rng = s.derived_rng(&format!("init/{}", cfg.name));
        let (own_t, own_w) = cfg.contributions(&mut rng, me, true)?;
        let (peer_t, peer_w) = cfg.contributions(&mut rng, peer, false)?;
        let (vm, vp) = (cfg.vocab_of(me), cfg.vocab_of(peer));
        let own_t = encode_matrix(&fx, vm, cfg.dim, &own_t, scale)?;
        let own_w = encode_matrix(&fx, cfg.dim, cfg.out, &own_w, scale)?;
        let peer_t = encode_matrix(&fx, vp, cfg.dim, &peer_t, scale)?;
        let peer_w = encode_matrix(&fx, cfg.dim, cfg.out, &peer_w, scale)?;

        let t_peer = mask_tensor(&fx, vp, cfg.dim, scale, fx.vmax_bits, s.rng());
        let v_peer = mask_tensor(&fx, cfg.dim, cfg.out, scale, fx.vmax_bits, s.rng());
        let (bt, bw) = (peer_t.sub(&t_peer)?, peer_w.sub(&v_peer)?);
        let (rt, rw) = exchange(
            s,
            |s| {
                s.send_blinded(&tags.t(&format!("init.share.T.{me}")), &bt)?;
                s.send_blinded(&tags.t(&format!("init.share.W.{me}")), &bw)
            },
            |s| Ok((s.recv_blinded(&tags.t(&format!("init.share.T.{peer}")))?, s.recv_blinded(&tags.t(&format!("init.share.W.{peer}")))?)),
        )?;
        let s_own = own_t.add(&rt)?;
        let u_own = own_w.add(&rw)?;

        let [enc_t_own, enc_u_peer, enc_v_own] = exchange_caches(s, &tags, "init.enc", [&t_peer, &u_own, &v_peer])?;
        Ok(EmbedMatMulLayer {
            vel_s: zeros_like(&s_own),
            vel_t: zeros_like(&t_peer),
            vel_u: zeros_like(&u_own),
            vel_v: zeros_like(&v_peer),
            enc_t_own,
            enc_u_peer,
            enc_v_own,
            budget: PieceBudget::new(&fx, cfg.momentum),
            cfg,
            fx,
            me,
            opt,
            s_own,
            t_peer,
            u_own,
            v_peer,
            ctx: None,
            last_backward: Vec::new(),
            tags,
        })
    }

    fn exchange_caches(&mut self, s: &mut ProtocolSession, step: &str) -> Result<()> {
        let [t, u, v] = exchange_caches(s, &self.tags, step, [&self.t_peer, &self.u_own, &self.v_peer])?;
        self.enc_t_own = t;
        self.enc_u_peer = u;
        self.enc_v_own = v;
        Ok(())
    }

    fn psi_bits(&self) -> u32 {
        self.fx.masked_bits(self.budget.bits()) + 1
    }

    fn stage2_bound(&self) -> u32 {
        self.psi_bits() + self.budget.bits() + ceil_log2(self.cfg.dim) + 1
    }

    fn check_indices(&self, idx: &[usize]) -> Result<()> {
        let vocab = self.cfg.vocab_of(self.me);
        match idx.iter().find(|&&i| i >= vocab) {
            Some(i) => Err(Error::Shape(format!("index {i} outside vocabulary of {vocab}"))),
            None => Ok(()),
        }
    }

    fn start_forward(&mut self, s: &mut ProtocolSession, idx: &[usize]) -> Result<()> {
        self.check_indices(idx)?;
        for (what, t) in [("S", &self.s_own), ("T", &self.t_peer), ("U", &self.u_own), ("V", &self.v_peer)] {
            self.budget.check(what, t)?;
        }
        let (me, peer) = (s.me(), s.peer());
        let tags = self.tags.clone();
        let peer_pk = s.peer_pk().clone();
        let pb = self.budget.bits();

        let gathered = self.enc_t_own.row_gather(idx)?;
        let mut mask = None;
        let comp = exchange(
            s,
            |s| {
                mask = Some(he2ss_send(s, &tags.t(&format!("fw.lkup.he2ss.{me}")), &gathered, pb)?.0);
                Ok(())
            },
            |s| he2ss_recv(s, &tags.t(&format!("fw.lkup.he2ss.{peer}")), pb),
        )?;
        let lkup_mask = mask.expect("send ran");
        let psi = self.s_own.lkup(idx)?.add(&lkup_mask)?;
        if comp.rows() != psi.rows() {
            return Err(Error::Shape(format!("peer batch {} vs {}", comp.rows(), psi.rows())));
        }

        let bound = self.stage2_bound();
        let mut eps = Vec::with_capacity(2);
        let mut received = Vec::with_capacity(2);
        for (step, c) in [
            ("fw.mm1.he2ss", CipherTensor::pc_matmul(&peer_pk, &psi, &self.enc_v_own)?),
            ("fw.mm2.he2ss", CipherTensor::pc_matmul(&peer_pk, &comp, &self.enc_u_peer)?),
        ] {
            let mut e = None;
            let r = exchange(
                s,
                |s| {
                    e = Some(he2ss_send(s, &tags.t(&format!("{step}.{me}")), &c, bound)?.0);
                    Ok(())
                },
                |s| he2ss_recv(s, &tags.t(&format!("{step}.{peer}")), bound),
            )?;
            eps.push(e.expect("send ran"));
            received.push(r);
        }
        let mut z_piece = psi.matmul(&self.u_own)?.add(&comp.matmul(&self.v_peer)?)?;
        for t in eps.iter().chain(&received) {
            z_piece = z_piece.add(t)?;
        }
        let [e1, e2]: [FxTensor; 2] = eps.try_into().expect("two");
        let [r1, r2]: [FxTensor; 2] = received.try_into().expect("two");
        self.ctx = Some(EmbedForwardContext {
            idx: idx.to_vec(),
            psi,
            comp,
            lkup_mask,
            eps: [e1, e2],
            received: [r1, r2],
            z_piece,
        });
        Ok(())
    }

    /// Forward protocol. B receives `Some(Z)` at scale `4F`; A gets `None`.
    pub fn forward(&mut self, s: &mut ProtocolSession, idx: &[usize]) -> Result<Option<FxTensor>> {
        self.start_forward(s, idx)?;
        let ctx = self.ctx.as_ref().expect("set");
        let tag = self.tags.t("fw.zshare");
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

    pub(crate) fn forward_shared(&mut self, s: &mut ProtocolSession, idx: &[usize]) -> Result<FxTensor> {
        self.start_forward(s, idx)?;
        Ok(self.ctx.as_ref().expect("set").z_piece.clone())
    }

    fn take_ctx(&mut self, g: &FxTensor) -> Result<EmbedForwardContext> {
        let ctx = self.ctx.take().ok_or_else(|| Error::State(format!("backward before forward in layer `{}`", self.cfg.name)))?;
        if g.scale() != self.fx.frac_bits {
            return Err(Error::Scale(self.fx.frac_bits, g.scale()));
        }
        if g.shape() != (ctx.idx.len(), self.cfg.out) {
            return Err(Error::Shape(format!("gradient {:?}, expected ({}, {})", g.shape(), ctx.idx.len(), self.cfg.out)));
        }
        Ok(ctx)
    }

    /// Backward protocol. B passes `Some(eta * dL/dZ)` at scale `F`; A
    /// passes `None`. Gradients use the weights from before this step.
    pub fn backward(&mut self, s: &mut ProtocolSession, grad: Option<&FxTensor>) -> Result<()> {
        let tags = self.tags.clone();
        let peer_pk = s.peer_pk().clone();
        let keys = s.shared_keys();
        let vmax = self.fx.vmax_bits;
        let (d_u, d_v, d_s, d_t, ctx);
        let mut log = Vec::new();
        if self.me.is_b() {
            let g = grad.ok_or_else(|| Error::State("party B must supply the gradient".into()))?;
            ctx = self.take_ctx(g)?;
            let enc_g = CipherTensor::encrypt_own(&keys, g, s.rng())?;
            s.send_cipher(&tags.t("bw.encgrad"), &enc_g)?;
            // W_A: B's share of E_A times G, folded by A before splitting
            let part_a = CipherTensor::encrypt_own(&keys, &ctx.comp.matmul_t(g)?, s.rng())?;
            s.send_cipher(&tags.t("bw.w.partA"), &part_a)?;
            d_v = he2ss_recv(s, &tags.t("bw.w.he2ss.A"), vmax)?;
            let part_b = CipherTensor::encrypt_own(&keys, &ctx.psi.matmul_t(g)?, s.rng())?;
            s.send_cipher(&tags.t("bw.w.partB"), &part_b)?;
            d_u = he2ss_recv(s, &tags.t("bw.w.he2ss.B"), vmax)?;
            // Q_A: B supplies G V_A^T
            let gv = CipherTensor::encrypt_own(&keys, &g.matmul(&self.v_peer.transpose())?, s.rng())?;
            s.send_cipher(&tags.t("bw.q.gvA"), &gv)?;
            d_t = he2ss_recv(s, &tags.t("bw.q.he2ss.A"), vmax)?;
            // Q_B: [[G V_B^T]]_A + G U_B^T, scattered, then split
            let ge = CipherTensor::pc_matmul(&peer_pk, g, &self.enc_v_own.transpose())?
                .add_plain(&peer_pk, &g.matmul(&self.u_own.transpose())?)?;
            let gq = ge.scatter_add_rows(&peer_pk, &ctx.idx, self.cfg.vocab_b)?;
            d_s = he2ss_send(s, &tags.t("bw.q.he2ss.B"), &gq, vmax)?.0;
            log.push(("grad_Z_eta".to_string(), g.clone()));
        } else {
            let enc_g = s.recv_cipher(&tags.t("bw.encgrad"))?;
            expect_owner(&enc_g, s.peer())?;
            ctx = self.take_ctx(&FxTensor::zeros(enc_g.rows(), enc_g.cols(), enc_g.scale()))?;
            let part_a = s.recv_cipher(&tags.t("bw.w.partA"))?;
            let gw_a = CipherTensor::pc_matmul_t(&peer_pk, &ctx.psi, &enc_g)?.add(&peer_pk, &part_a)?;
            d_u = he2ss_send(s, &tags.t("bw.w.he2ss.A"), &gw_a, vmax)?.0;
            let part_b = s.recv_cipher(&tags.t("bw.w.partB"))?;
            let gw_b = CipherTensor::pc_matmul_t(&peer_pk, &ctx.comp, &enc_g)?.add(&peer_pk, &part_b)?;
            d_v = he2ss_send(s, &tags.t("bw.w.he2ss.B"), &gw_b, vmax)?.0;
            let gv = s.recv_cipher(&tags.t("bw.q.gvA"))?;
            let ge = CipherTensor::cp_matmul(&peer_pk, &enc_g, &self.u_own.transpose())?.add(&peer_pk, &gv)?;
            let gq = ge.scatter_add_rows(&peer_pk, &ctx.idx, self.cfg.vocab_a)?;
            d_s = he2ss_send(s, &tags.t("bw.q.he2ss.A"), &gq, vmax)?.0;
            d_t = he2ss_recv(s, &tags.t("bw.q.he2ss.B"), vmax)?;
        }
        self.apply(s, [d_u, d_v, d_s, d_t], ctx, log)
    }

    /// Floors each gradient piece by `F`, updates all four pieces, then
    /// refreshes the peer's caches.
    fn apply(
        &mut self,
        s: &mut ProtocolSession,
        deltas: [FxTensor; 4],
        ctx: EmbedForwardContext,
        mut log: Vec<(String, FxTensor)>,
    ) -> Result<()> {
        let f = self.fx.frac_bits;
        let [du, dv, ds, dt] = deltas.map(|d| d.truncate(f));
        let (du, dv, ds, dt) = (du?, dv?, ds?, dt?);
        self.opt.step(&mut self.u_own, &mut self.vel_u, &du)?;
        self.opt.step(&mut self.v_peer, &mut self.vel_v, &dv)?;
        self.opt.step(&mut self.s_own, &mut self.vel_s, &ds)?;
        self.opt.step(&mut self.t_peer, &mut self.vel_t, &dt)?;
        self.budget.step();
        self.exchange_caches(s, "bw.refresh")?;
        log.extend([
            ("delta_U".to_string(), du),
            ("delta_V".to_string(), dv),
            ("delta_S".to_string(), ds),
            ("delta_T".to_string(), dt),
        ]);
        self.last_backward = log;
        self.ctx = Some(ctx);
        Ok(())
    }

    /// Backward from shared `eta * dL/dZ` pieces. Both parties get `[[G]]`
    /// under the peer's key; every gradient is then assembled under the
    /// owner's peer key and split, A's tensors first.
    pub(crate) fn backward_shared(&mut self, s: &mut ProtocolSession, g_piece: &FxTensor) -> Result<()> {
        let ctx = self.take_ctx(g_piece)?;
        let tags = self.tags.clone();
        let peer_pk = s.peer_pk().clone();
        let keys = s.shared_keys();
        let vmax = self.fx.vmax_bits;
        let (me, peer) = (s.me(), s.peer());
        let enc_g = ss2he(s, &tags.t("bw.ss2he"), g_piece)?;
        // [[comp^T G]] under the owner's key hides a share-sized value
        let fold_bound = self.psi_bits() + vmax + ceil_log2(ctx.idx.len().max(1));
        let order = if me.is_b() { [peer, me] } else { [me, peer] };

        let mut d_u = None;
        let mut d_v = None;
        for owner in order {
            let tag_fold = tags.t(&format!("bw.w.fold.{owner}"));
            let tag_split = tags.t(&format!("bw.w.he2ss.{owner}"));
            if owner == me {
                let r = he2ss_recv(s, &tag_fold, fold_bound)?;
                let gw = CipherTensor::pc_matmul_t(&peer_pk, &ctx.psi, &enc_g)?.add_plain(&peer_pk, &r)?;
                d_u = Some(he2ss_send(s, &tag_split, &gw, vmax)?.0);
            } else {
                let part = CipherTensor::pc_matmul_t(&peer_pk, &ctx.comp, &enc_g)?;
                let (m, _) = he2ss_send(s, &tag_fold, &part, fold_bound)?;
                let rest = he2ss_recv(s, &tag_split, fold_bound)?;
                d_v = Some(rest.add(&m)?);
            }
        }

        let mut d_s = None;
        let mut d_t = None;
        for owner in order {
            let tag_gv = tags.t(&format!("bw.q.gv.{owner}"));
            let tag_split = tags.t(&format!("bw.q.he2ss.{owner}"));
            if owner == me {
                let gv = s.recv_cipher(&tag_gv)?;
                expect_owner(&gv, peer)?;
                let ge = CipherTensor::cp_matmul(&peer_pk, &enc_g, &self.u_own.transpose())?
                    .add(&peer_pk, &gv)?
                    .add(&peer_pk, &CipherTensor::pc_matmul(&peer_pk, g_piece, &self.enc_v_own.transpose())?)?;
                let gq = ge.scatter_add_rows(&peer_pk, &ctx.idx, self.cfg.vocab_of(me))?;
                d_s = Some(he2ss_send(s, &tag_split, &gq, vmax)?.0);
            } else {
                let gv = CipherTensor::encrypt_own(&keys, &g_piece.matmul(&self.v_peer.transpose())?, s.rng())?;
                s.send_cipher(&tag_gv, &gv)?;
                d_t = Some(he2ss_recv(s, &tag_split, vmax)?);
            }
        }
        let log = vec![("grad_piece".to_string(), g_piece.clone())];
        let take = |o: Option<FxTensor>| o.expect("both owners visited");
        self.apply(s, [take(d_u), take(d_v), take(d_s), take(d_t)], ctx, log)
    }

    pub fn config(&self) -> &EmbedConfig {
        &self.cfg
    }

    pub fn party(&self) -> PartyId {
        self.me
    }

    /// Piece `S` of this party's table.
    pub fn s_own(&self) -> &FxTensor {
        &self.s_own
    }

    /// Piece `T` of the peer's table.
    pub fn t_peer(&self) -> &FxTensor {
        &self.t_peer
    }

    pub fn u_own(&self) -> &FxTensor {
        &self.u_own
    }

    pub fn v_peer(&self) -> &FxTensor {
        &self.v_peer
    }

    /// Caches `([[T_own]], [[U_peer]], [[V_own]])` under the peer's key.
    pub fn caches(&self) -> (&CipherTensor, &CipherTensor, &CipherTensor) {
        (&self.enc_t_own, &self.enc_u_peer, &self.enc_v_own)
    }

    pub fn budget(&self) -> &PieceBudget {
        &self.budget
    }

    pub fn context(&self) -> Option<&EmbedForwardContext> {
        self.ctx.as_ref()
    }

    /// Every plaintext tensor this party holds, for state scans.
    pub fn plaintext_state(&self) -> Vec<(String, FxTensor)> {
        let mut out: Vec<(String, FxTensor)> = [
            ("S", &self.s_own),
            ("T_peer", &self.t_peer),
            ("U", &self.u_own),
            ("V_peer", &self.v_peer),
            ("vel_S", &self.vel_s),
            ("vel_T", &self.vel_t),
            ("vel_U", &self.vel_u),
            ("vel_V", &self.vel_v),
        ]
        .into_iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
        if let Some(c) = &self.ctx {
            out.push(("psi".to_string(), c.psi.clone()));
            out.push(("comp".to_string(), c.comp.clone()));
            out.push(("lkup_mask".to_string(), c.lkup_mask.clone()));
            for (i, (e, r)) in c.eps.iter().zip(&c.received).enumerate() {
                out.push((format!("eps{}", i + 1), e.clone()));
                out.push((format!("received{}", i + 1), r.clone()));
            }
            out.push(("z_piece".to_string(), c.z_piece.clone()));
        }
        out.extend(self.last_backward.iter().cloned());
        out
    }

    const MAGIC: &'static [u8] = b"VFLEM\x01";

    pub fn checkpoint(&self) -> Vec<u8> {
        let mut w = CheckpointWriter::new(Self::MAGIC);
        for t in [
            &self.s_own, &self.vel_s, &self.t_peer, &self.vel_t, &self.u_own, &self.vel_u, &self.v_peer, &self.vel_v,
        ] {
            w.block(&t.to_wire());
        }
        for c in [&self.enc_t_own, &self.enc_u_peer, &self.enc_v_own] {
            w.block(&c.to_wire());
        }
        w.block(&self.budget.steps.to_be_bytes());
        w.finish()
    }

    pub fn restore_checkpoint(&mut self, bytes: &[u8]) -> Result<()> {
        let mut r = CheckpointReader::new(bytes, Self::MAGIC)?;
        let mut t = Vec::with_capacity(8);
        for _ in 0..8 {
            t.push(FxTensor::from_wire(r.block()?)?);
        }
        let mut c = Vec::with_capacity(3);
        for _ in 0..3 {
            c.push(CipherTensor::from_wire(r.block()?)?);
        }
        let steps = r.u64()?;
        r.done()?;
        let current = [&self.s_own, &self.vel_s, &self.t_peer, &self.vel_t, &self.u_own, &self.vel_u, &self.v_peer, &self.vel_v];
        if t.iter().zip(current).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Shape("checkpoint does not match layer dimensions".into()));
        }
        for e in &c {
            expect_owner(e, self.enc_v_own.owner())?;
        }
        let [s_own, vel_s, t_peer, vel_t, u_own, vel_u, v_peer, vel_v]: [FxTensor; 8] = t.try_into().expect("eight");
        let [et, eu, ev]: [CipherTensor; 3] = c.try_into().expect("three");
        *self = EmbedMatMulLayer {
            s_own,
            vel_s,
            t_peer,
            vel_t,
            u_own,
            vel_u,
            v_peer,
            vel_v,
            enc_t_own: et,
            enc_u_peer: eu,
            enc_v_own: ev,
            budget: PieceBudget { steps, ..self.budget },
            ctx: None,
            last_backward: Vec::new(),
            ..self.clone()
        };
        Ok(())
    }
}
