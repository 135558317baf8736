mod args;
mod probe;

use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::Context;
use clap::Parser;
use serde_json::{json, Value};
use vfl_core::bench::{bench_sparse, to_csv, verdict, BenchConfig};
use vfl_core::party::{PartyId, SeedSource};
use vfl_core::train::truth::{first_step_truth, SCAN_SCALES};
use vfl_core::train::{oracle_train, train_party, History, OracleOptions};
use vfl_core::transport::{connect, generate_keys, run_local, scan_transcript, SessionConfig, TcpChannel, Transcript};
use vfl_core::Error;

use args::{Cli, Command, DataArgs, ModelArgs, Transport};

pub(crate) fn emit(v: Value) {
    println!("{v}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let core = e.chain().find_map(|c| c.downcast_ref::<Error>());
            let (kind, code) = match core {
                Some(c) if c.is_protocol() => ("protocol", 3),
                Some(Error::Config(_) | Error::Data { .. } | Error::Shape(_)) => ("usage", 2),
                _ => ("runtime", 1),
            };
            let step_tag = core.and_then(|c| c.step_tag());
            emit(json!({"event": "error", "kind": kind, "step_tag": step_tag, "message": format!("{e:#}")}));
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Keygen { role, seed, key_bits } => {
            let kp = generate_keys(&SessionConfig::with_key_bits(key_bits), role, SeedSource::Fixed(seed))?;
            let n = kp.public.n().to_str_radix(16);
            emit(json!({"event": "keygen", "role": role.to_string(), "key_bits": key_bits, "n": n}));
            eprintln!("{role}: {key_bits}-bit key derived from seed {seed}");
            Ok(0)
        }
        Command::Train { data, model, transport: Transport::Threads, transcript_dir } => train_threads(&data, &model, transcript_dir.as_deref()),
        Command::Train { transport: Transport::Tcp, transcript_dir, .. } => train_processes(transcript_dir.as_deref()),
        Command::RunParty { role, listen, connect: addr, data, model, transcript } => {
            run_party(role, listen, addr, &data, &model, transcript.as_deref())
        }
        Command::OracleTrain { data, model, match_fixed_point, party_b_only } => {
            let sp = data.split()?;
            let spec = model.spec(&sp.train.0, &sp.train.1)?;
            let (sa, sb) = model.seeds();
            let opts = OracleOptions { match_fixed_point, party_b_only };
            let run = oracle_train(&spec, &model.train_config(), sa, sb, (&sp.train.0, &sp.train.1), (&sp.test.0, &sp.test.1), opts)?;
            report_history(&run.history, &model)?;
            Ok(0)
        }
        Command::Probe { kind, data, model, pieces, amplify, hidden_layers, hidden_bias, width } => {
            let opts = probe::ProbeOptions { pieces, amplify, hidden_layers, hidden_bias, width };
            probe::run(kind, &data, &model, &opts)
        }
        Command::ScanTranscript { transcript, data, model } => {
            let bytes = std::fs::read(&transcript).with_context(|| format!("reading {}", transcript.display()))?;
            let t = Transcript::from_bytes(&bytes)?;
            let sp = data.split()?;
            let spec = model.spec(&sp.train.0, &sp.train.1)?;
            let (sa, sb) = model.seeds();
            let truth = first_step_truth(&spec, &model.train_config(), sa, sb, (&sp.train.0, &sp.train.1))?;
            let violations: Vec<Value> = truth
                .iter()
                .flat_map(|set| scan_transcript(&t, &set.policy, &set.quantities, &SCAN_SCALES))
                .map(|v| json!({"party": v.party.to_string(), "location": v.location, "quantity": v.quantity}))
                .collect();
            let clean = violations.is_empty();
            emit(json!({
                "event": "scan",
                "party": t.party.to_string(),
                "messages_received": t.received().count(),
                "digest": t.digest(),
                "violations": violations,
                "pass": clean,
            }));
            eprintln!("{}: {} received messages, {}", t.party, t.received().count(), if clean { "clean" } else { "VIOLATIONS" });
            Ok(if clean { 0 } else { 1 })
        }
        Command::BenchSparse { batch, features, out, sparsity, key_bits, seed, csv } => {
            let cfg = BenchConfig { key_bits, batch, in_dim: features, out, sparsities: sparsity, seed };
            let rows = bench_sparse(&cfg)?;
            for r in &rows {
                emit(json!({
                    "event": "bench", "sparsity": r.sparsity, "nnz": r.nnz,
                    "dense_secs": r.dense_secs, "csr_secs": r.sparse_secs, "speedup": r.speedup(),
                }));
            }
            if let Some(p) = csv {
                std::fs::write(&p, to_csv(&rows))?;
            }
            let (fast, monotone) = verdict(&rows);
            eprint!("{}", to_csv(&rows));
            eprintln!("99% sparsity >= 5x: {fast}; monotone: {monotone}");
            Ok(0)
        }
    }
}

fn report_history(h: &History, model: &ModelArgs) -> anyhow::Result<()> {
    let metric = h.metric.name();
    for e in &h.epochs {
        emit(json!({"event": "epoch", "epoch": e.epoch, "train_loss": e.train_loss, metric: e.test_metric}));
    }
    if let Some(p) = &model.metrics_csv {
        std::fs::write(p, h.to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    eprintln!("{} epochs, final test {metric} {:.4}", h.epochs.len().saturating_sub(1), h.final_metric());
    Ok(())
}

fn save_transcript(t: &Transcript, path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, t.to_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn train_threads(data: &DataArgs, model: &ModelArgs, transcript_dir: Option<&Path>) -> anyhow::Result<u8> {
    let sp = data.split()?;
    let spec = model.spec(&sp.train.0, &sp.train.1)?;
    let cfg = model.train_config();
    let (sa, sb) = model.seeds();
    eprintln!("{}: {} train / {} test instances, {} + {} features", sp.source, sp.train.1.len(), sp.test.1.len(), spec.in_a, spec.in_b);
    let t = Instant::now();
    let ((_, ta), ((_, h), tb)) = run_local(
        model.session(),
        sa,
        sb,
        |s| Ok((train_party(s, &spec, &cfg, &sp.train.0, &sp.test.0)?, s.take_transcript())),
        |s| Ok((train_party(s, &spec, &cfg, &sp.train.1, &sp.test.1)?, s.take_transcript())),
    )?;
    let h = h.expect("B reports history");
    report_history(&h, model)?;
    if let Some(dir) = transcript_dir {
        save_transcript(&ta, &dir.join("A.transcript"))?;
        save_transcript(&tb, &dir.join("B.transcript"))?;
    }
    emit(json!({
        "event": "summary",
        "final_metric": h.final_metric(),
        "metric": h.metric.name(),
        "iterations": h.iter_losses.len(),
        "seconds": t.elapsed().as_secs_f64(),
        "transcript_digest_a": ta.digest(),
        "transcript_digest_b": tb.digest(),
    }));
    Ok(0)
}

/// Re-invokes this binary as two `run-party` processes on localhost.
fn train_processes(transcript_dir: Option<&Path>) -> anyhow::Result<u8> {
    let port = TcpListener::bind("127.0.0.1:0")?.local_addr()?.port();
    let addr = format!("127.0.0.1:{port}");
    let mut forwarded = Vec::new();
    let mut it = std::env::args().skip_while(|a| a != "train").skip(1);
    while let Some(a) = it.next() {
        match a.as_str() {
            "--transport" | "--transcript-dir" => {
                it.next();
            }
            s if s.starts_with("--transport=") || s.starts_with("--transcript-dir=") => {}
            _ => forwarded.push(a),
        }
    }
    let exe = std::env::current_exe()?;
    let spawn = |role: &str, flag: &str| -> anyhow::Result<std::process::Child> {
        let mut cmd = std::process::Command::new(&exe);
        cmd.args(["run-party", "--role", role, flag, &addr]).args(&forwarded);
        if let Some(dir) = transcript_dir {
            cmd.arg("--transcript").arg(dir.join(format!("{role}.transcript")));
        }
        Ok(cmd.spawn()?)
    };
    let mut b = spawn("B", "--listen")?;
    let mut a = spawn("A", "--connect")?;
    let (sa, sb) = (a.wait()?, b.wait()?);
    for s in [sb, sa] {
        if !s.success() {
            return Ok(s.code().map(|c| c as u8).unwrap_or(1));
        }
    }
    Ok(0)
}

fn run_party(
    role: PartyId,
    listen: Option<String>,
    addr: Option<String>,
    data: &DataArgs,
    model: &ModelArgs,
    transcript: Option<&Path>,
) -> anyhow::Result<u8> {
    let sp = data.split()?;
    let spec = model.spec(&sp.train.0, &sp.train.1)?;
    let cfg = model.train_config();
    let (train, test) = if role.is_b() { (&sp.train.1, &sp.test.1) } else { (&sp.train.0, &sp.test.0) };
    // each process loads the aligned dataset and keeps only its own columns
    let stream = match (listen, addr) {
        (Some(l), _) => TcpListener::bind(&l).with_context(|| format!("binding {l}"))?.accept()?.0,
        (None, Some(a)) => connect_with_retry(&a, Duration::from_secs(model.timeout_secs))?,
        (None, None) => anyhow::bail!(Error::Config("need --listen or --connect".into())),
    };
    let config = model.session();
    let (sa, sb) = model.seeds();
    let seed = if role.is_b() { sb } else { sa };
    let peer = if role.is_b() { PartyId::A } else { PartyId::B };
    let keys = generate_keys(&config, role, seed)?;
    let mut s = connect(Box::new(TcpChannel::new(stream)?), role, peer, config, keys, seed)?;
    let (_, h) = train_party(&mut s, &spec, &cfg, train, test)?;
    let t = s.take_transcript();
    if let Some(p) = transcript {
        save_transcript(&t, p)?;
    }
    if let Some(h) = &h {
        report_history(h, model)?;
    }
    emit(json!({"event": "party_done", "role": role.to_string(), "transcript_digest": t.digest(), "messages": t.entries.len()}));
    Ok(0)
}

fn connect_with_retry(addr: &str, timeout: Duration) -> anyhow::Result<TcpStream> {
    let start = Instant::now();
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(_) if start.elapsed() < timeout => std::thread::sleep(Duration::from_millis(100)),
            Err(_) => anyhow::bail!(Error::Timeout(format!("connect {addr}"))),
        }
    }
}
