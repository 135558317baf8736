//! Ground truth for privacy scans: the restricted quantities of the first
//! training step, recomputed in exact fixed point from both parties' data
//! and seeds.

use super::{ModelSpec, TopModel, TrainConfig};
use crate::data::PartyView;
use crate::error::{Error, Result};
use crate::fixed::FixedConfig;
use crate::party::SeedSource;
use crate::tensor::FxTensor;
use crate::transport::{PrivacyPolicy, Quantity};

/// Scales a restricted quantity is searched at.
pub const SCAN_SCALES: [u32; 5] = [0, 20, 40, 60, 80];

/// One source layer's policy with its ground truth.
#[derive(Clone, Debug)]
pub struct TruthSet {
    pub policy: PrivacyPolicy,
    pub quantities: Vec<Quantity>,
}

/// Truth for the first mini-batch of epoch 1, covering initial weights,
/// activations, `Z`, `lr * dL/dZ` and the resulting gradients.
pub fn first_step_truth(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed_a: SeedSource,
    seed_b: SeedSource,
    train: (&PartyView, &PartyView),
) -> Result<Vec<TruthSet>> {
    spec.validate()?;
    cfg.validate()?;
    let fx = FixedConfig::default();
    let f = fx.frac_bits;
    let rows = cfg.batches(train.1.len(), 0).into_iter().next().ok_or_else(|| Error::Config("empty training set".into()))?;
    let x = |v: &PartyView| -> Result<FxTensor> {
        let batch: Vec<_> = rows.iter().map(|&i| v.rows[i].clone()).collect();
        FxTensor::csr_from_rows(v.cols, &batch, f, &fx)
    };
    let (xa, xb) = (x(train.0)?, x(train.1)?);
    let (wa, wb) = spec.wide_config(cfg.momentum).replay_init(seed_a, seed_b, &fx)?;
    let (xa_wa, xb_wb) = (xa.matmul(&wa)?, xb.matmul(&wb)?);
    let z_wide = xa_wa.add(&xb_wb)?;

    let deep = match spec.deep_config(cfg.momentum) {
        Some(dc) => {
            let idx = |v: &PartyView| -> Result<Vec<usize>> {
                let cat = v.cat.as_ref().ok_or_else(|| Error::Config("missing categorical field".into()))?;
                Ok(rows.iter().map(|&i| cat.values[i]).collect())
            };
            let (ia, ib) = (idx(train.0)?, idx(train.1)?);
            let t = dc.replay_init(seed_a, seed_b, &fx)?;
            let (ea, eb) = (t[0].lkup(&ia)?, t[2].lkup(&ib)?);
            Some((t, ea, eb, ia, ib))
        }
        None => None,
    };
    let z = match &deep {
        Some((t, ea, eb, _, _)) => z_wide.upscale(f).add(&ea.matmul(&t[1])?.add(&eb.matmul(&t[3])?)?)?,
        None => z_wide.clone(),
    };

    let mut top = TopModel::new(spec.top_spec(), &mut seed_b.rng("init/top"))?;
    let labels = train.1.labels.as_ref().ok_or_else(|| Error::Config("B's view has no labels".into()))?;
    let y: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
    let z_float = ndarray::Array2::from_shape_vec(z.shape(), z.to_f64()).expect("shape");
    let st = top.step(&z_float, &y, cfg.lr, cfg.momentum)?;
    let scaled: Vec<f64> = st.grad_z.iter().map(|v| v * cfg.lr).collect();
    let g = FxTensor::from_f64(st.grad_z.nrows(), st.grad_z.ncols(), &scaled, f, &fx)?;

    let q = Quantity::new;
    let mut out = vec![TruthSet {
        policy: PrivacyPolicy::matmul(),
        quantities: vec![
            q("XA_WA", xa_wa),
            q("XB_WB", xb_wb),
            q("Z", z.clone()),
            q("grad_Z", g.clone()),
            q("grad_WA", xa.matmul_t(&g)?),
            q("grad_WB", xb.matmul_t(&g)?),
            q("WA", wa),
            q("WB", wb),
        ],
    }];
    if let Some((t, ea, eb, ia, ib)) = deep {
        let grad_ea = g.matmul(&t[1].transpose())?;
        let grad_eb = g.matmul(&t[3].transpose())?;
        let [qa, wa, qb, wb] = t;
        out.push(TruthSet {
            policy: PrivacyPolicy::embed_matmul(),
            quantities: vec![
                q("EA_WA", ea.matmul(&wa)?),
                q("EB_WB", eb.matmul(&wb)?),
                q("grad_QA", grad_ea.lkup_bw(&ia, spec.vocab_a)?),
                q("grad_QB", grad_eb.lkup_bw(&ib, spec.vocab_b)?),
                q("grad_EA", grad_ea),
                q("grad_EB", grad_eb),
                q("grad_WA", ea.matmul_t(&g)?),
                q("grad_WB", eb.matmul_t(&g)?),
                q("EA", ea),
                q("EB", eb),
                q("QA", qa),
                q("WA", wa),
                q("QB", qb),
                q("WB", wb),
                q("Z", z),
                q("grad_Z", g),
            ],
        });
    }
    Ok(out)
}
