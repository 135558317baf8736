use serde_json::json;
use vfl_core::layers::{MatMulConfig, MatMulLayer};
use vfl_core::party::SeedSource;
use vfl_core::probes::{
    probe_derivative, probe_derivative_blindfl, probe_forward_ablation, probe_forward_baseline, probe_forward_blindfl,
    probe_model_shares, ProbeReport,
};
use vfl_core::train::baseline::{split_party, SplitConfig};
use vfl_core::train::truth::{first_step_truth, SCAN_SCALES};
use vfl_core::train::{train_party, ModelKind, TrainConfig};
use vfl_core::transport::run_local;
use vfl_core::Error;

use crate::args::{DataArgs, ModelArgs, ProbeKind};
use crate::emit;

pub struct ProbeOptions {
    pub pieces: u64,
    pub amplify: Vec<f64>,
    pub hidden_layers: Vec<usize>,
    pub hidden_bias: f64,
    pub width: usize,
}

fn report(r: &ProbeReport) {
    let details: serde_json::Map<String, serde_json::Value> = r.details.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    emit(json!({
        "event": "probe",
        "probe": r.probe,
        "metric": r.metric,
        "value": r.value,
        "threshold": r.threshold.describe(),
        "pass": r.pass,
        "details": details,
    }));
    eprintln!("{:<32} {} = {:.4} ({}) {}", r.probe, r.metric, r.value, r.threshold.describe(), if r.pass { "PASS" } else { "FAIL" });
}

pub fn run(kind: ProbeKind, data: &DataArgs, model: &ModelArgs, opts: &ProbeOptions) -> anyhow::Result<u8> {
    let reports = match kind {
        ProbeKind::Forward => forward(data, model, opts)?,
        ProbeKind::Derivative => derivative(data, model, opts)?,
        ProbeKind::Shares => shares(data, model, opts)?,
    };
    reports.iter().for_each(report);
    Ok(if reports.iter().all(|r| r.pass) { 0 } else { 1 })
}

fn forward(data: &DataArgs, model: &ModelArgs, opts: &ProbeOptions) -> anyhow::Result<Vec<ProbeReport>> {
    let sp = data.split()?;
    let (a, b) = (&sp.train.0, &sp.train.1);
    let labels = b.labels.as_ref().expect("B's view has labels");
    let cfg = model.train_config();
    let lr = ModelArgs { model: ModelKind::Lr, ..model.clone() };
    let spec = lr.spec(a, b)?;
    let mut pieces = Vec::new();
    for k in 0..opts.pieces.max(1) {
        let (sa, sb) = (SeedSource::Fixed(model.seed_a.wrapping_add(k)), SeedSource::Fixed(model.seed_b.wrapping_add(k)));
        let ((ma, _), _) = run_local(model.session(), sa, sb, |s| train_party(s, &spec, &cfg, a, a), |s| train_party(s, &spec, &cfg, b, b))?;
        pieces.push(ma.wide.u().clone());
    }
    let mut out = vec![probe_forward_blindfl(a, &pieces, labels)?];
    let sl = SplitConfig::linear(cfg.clone());
    let (sa, sb) = model.seeds();
    let (oa, _) = run_local(model.session(), sa, sb, |s| split_party(s, &sl, a, a), |s| split_party(s, &sl, b, b))?;
    out.push(probe_forward_baseline(a, &oa.bottom, labels)?);
    for &amp in &opts.amplify {
        out.push(probe_forward_ablation((a, b), &cfg, model.seeds(), amp)?);
    }
    Ok(out)
}

fn derivative(data: &DataArgs, model: &ModelArgs, opts: &ProbeOptions) -> anyhow::Result<Vec<ProbeReport>> {
    let sp = data.split()?;
    let (a, b) = (&sp.train.0, &sp.train.1);
    if a.cat.is_none() || b.cat.is_none() {
        anyhow::bail!(Error::Config("derivative probe needs a categorical dataset (try --dataset categorical)".into()));
    }
    let labels = b.labels.as_ref().expect("B's view has labels");
    let cfg = model.train_config();
    let (sa, sb) = model.seeds();
    let mut out = Vec::new();
    for &layers in &opts.hidden_layers {
        let sl = SplitConfig { hidden_bias: opts.hidden_bias, ..SplitConfig::embed(model.embed_dim, layers, cfg.clone()) };
        let (oa, _) = run_local(model.session(), sa, sb, |s| split_party(s, &sl, a, a), |s| split_party(s, &sl, b, b))?;
        let stream = oa.grad_stream.last().ok_or_else(|| Error::Config("derivative probe needs at least one epoch".into()))?;
        let mut r = probe_derivative(stream, labels)?;
        r.details.push(("hidden_layers".into(), layers as f64));
        out.push(r);
    }
    let wdl = ModelArgs { model: ModelKind::Wdl, ..model.clone() };
    let spec = wdl.spec(a, b)?;
    let one = TrainConfig { epochs: 1, ..cfg };
    let (ta, _) = run_local(
        model.session(),
        sa,
        sb,
        |s| {
            train_party(s, &spec, &one, a, a)?;
            Ok(s.take_transcript())
        },
        |s| train_party(s, &spec, &one, b, b),
    )?;
    let truth = first_step_truth(&spec, &one, sa, sb, (a, b))?;
    let embed = truth.last().expect("wdl has an embedding layer");
    out.push(probe_derivative_blindfl(&ta, &embed.quantities, &SCAN_SCALES));
    Ok(out)
}

fn shares(data: &DataArgs, model: &ModelArgs, opts: &ProbeOptions) -> anyhow::Result<Vec<ProbeReport>> {
    let sp = data.split()?;
    let cfg = MatMulConfig::new("probe", sp.train.0.cols, sp.train.1.cols, opts.width);
    let (sa, sb) = model.seeds();
    let (la, lb) = run_local(model.session(), sa, sb, |s| MatMulLayer::init(s, cfg.clone()), |s| MatMulLayer::init(s, cfg.clone()))?;
    let w_a = la.u().add(lb.v_peer())?;
    Ok(vec![probe_model_shares(la.u(), &w_a)?])
}
