use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vfl_core::data::{self, synth, vsplit, Dataset, PartyView, VerticalSplit};
use vfl_core::party::{PartyId, SeedSource};
use vfl_core::train::{ModelKind, ModelSpec, TrainConfig};
use vfl_core::transport::SessionConfig;

#[derive(Parser, Debug)]
#[command(name = "vfl", version, about = "Two-party vertical federated learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Derive a party's Paillier key pair from its seed and print the public key.
    Keygen {
        #[arg(long, value_parser = parse_role)]
        role: PartyId,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1024)]
        key_bits: u32,
    },
    /// Train with both parties in this invocation (threads or child processes).
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value_t = Transport::Threads)]
        transport: Transport,
        /// Write each party's transcript as `<dir>/<party>.transcript`.
        #[arg(long)]
        transcript_dir: Option<PathBuf>,
    },
    /// Run one party of a training job over TCP.
    RunParty {
        #[arg(long, value_parser = parse_role)]
        role: PartyId,
        #[arg(long, conflicts_with = "connect", required_unless_present = "connect")]
        listen: Option<String>,
        #[arg(long)]
        connect: Option<String>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
    /// Plaintext float training on collocated features.
    OracleTrain {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Quantize like the federated run.
        #[arg(long)]
        match_fixed_point: bool,
        /// Train on B's features only.
        #[arg(long)]
        party_b_only: bool,
    },
    /// Label-leakage probes.
    Probe {
        #[arg(value_enum)]
        kind: ProbeKind,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Independent seed pairs for the federated forward probe.
        #[arg(long, default_value_t = 8)]
        pieces: u64,
        /// Mask scales for the ablation of the forward probe.
        #[arg(long, value_delimiter = ',', default_value = "1,100,10000")]
        amplify: Vec<f64>,
        /// Hidden-layer counts for the derivative probe.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        hidden_layers: Vec<usize>,
        /// Initial hidden bias of the split-learning top network.
        #[arg(long, default_value_t = 0.5)]
        hidden_bias: f64,
        /// Output width of the layer inspected by the shares probe.
        #[arg(long, default_value_t = 32)]
        width: usize,
    },
    /// Scan a saved transcript against first-step ground truth.
    ScanTranscript {
        #[arg(long)]
        transcript: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Time dense vs CSR `[[X W]]`.
    BenchSparse {
        #[arg(long, default_value_t = 128)]
        batch: usize,
        #[arg(long, default_value_t = 1000)]
        features: usize,
        #[arg(long, default_value_t = 1)]
        out: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,0.5,0.9,0.99")]
        sparsity: Vec<f64>,
        #[arg(long, default_value_t = 512)]
        key_bits: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Transport {
    Threads,
    Tcp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProbeKind {
    Forward,
    Derivative,
    Shares,
}

fn parse_role(s: &str) -> Result<PartyId, String> {
    match s {
        "A" | "a" => Ok(PartyId::A),
        "B" | "b" => Ok(PartyId::B),
        _ => Err(format!("role must be A or B, got `{s}`")),
    }
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// `a9a`, `w8a`, `categorical`, `multiclass`, or a LIBSVM / categorical
    /// CSV path. `a9a` and `w8a` are read from `$VFL_DATA_DIR` when present
    /// and generated otherwise.
    #[arg(long, default_value = "a9a")]
    pub dataset: String,
    /// Declared feature count for LIBSVM files.
    #[arg(long)]
    pub cols: Option<usize>,
    /// Cap on the number of instances used.
    #[arg(long, default_value_t = 5000)]
    pub instances: usize,
    /// Fraction held out for testing.
    #[arg(long, default_value_t = 0.2)]
    pub test_frac: f64,
    /// `even` or `a_lo..a_hi,b_lo..b_hi`.
    #[arg(long, default_value = "even")]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
}

pub struct Split {
    pub train: (PartyView, PartyView),
    pub test: (PartyView, PartyView),
    pub source: String,
}

impl DataArgs {
    pub fn dataset(&self) -> anyhow::Result<(Dataset, String)> {
        let n = self.instances;
        let named = |file: &str| data::local_dataset(file);
        let ds = match self.dataset.as_str() {
            "a9a" => match named("a9a") {
                Some(p) => (data::load_libsvm(&p, Some(123))?, p.display().to_string()),
                None => (synth::a9a_like(n, self.data_seed), "synthetic a9a-like".into()),
            },
            "w8a" => match named("w8a") {
                Some(p) => (data::load_libsvm(&p, Some(300))?, p.display().to_string()),
                None => (synth::w8a_like(n, self.data_seed), "synthetic w8a-like".into()),
            },
            "categorical" => (synth::categorical(n, 12, 9, 6, self.data_seed), "synthetic categorical".into()),
            "multiclass" => (synth::multiclass(n, 20, 4, self.data_seed), "synthetic multiclass".into()),
            path if path.ends_with(".csv") => (data::load_categorical_csv(path.as_ref())?, path.to_string()),
            path => (data::load_libsvm(path.as_ref(), self.cols)?, path.to_string()),
        };
        Ok((ds.0.split_at(n).0, ds.1))
    }

    pub fn split(&self) -> anyhow::Result<Split> {
        if !(0.0..1.0).contains(&self.test_frac) {
            anyhow::bail!(vfl_core::Error::Config("--test-frac must be in [0, 1)".into()));
        }
        let (ds, source) = self.dataset()?;
        let split = VerticalSplit::parse(&self.split, ds.cols)?;
        let n_train = ds.len() - (ds.len() as f64 * self.test_frac).round() as usize;
        let (tr, te) = ds.split_at(n_train);
        Ok(Split { train: vsplit(&tr, &split)?, test: vsplit(&te, &split)?, source })
    }
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, default_value = "lr")]
    pub model: ModelKind,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 64)]
    pub mlp_width: usize,
    #[arg(long, default_value_t = 8)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 1)]
    pub seed_a: u64,
    #[arg(long, default_value_t = 2)]
    pub seed_b: u64,
    #[arg(long, default_value_t = 1024)]
    pub key_bits: u32,
    #[arg(long, default_value_t = 600)]
    pub timeout_secs: u64,
    #[arg(long)]
    pub metrics_csv: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl ModelArgs {
    pub fn spec(&self, a: &PartyView, b: &PartyView) -> anyhow::Result<ModelSpec> {
        let mut spec = ModelSpec::for_views(self.model, a, b)?;
        spec.mlp_width = self.mlp_width;
        spec.embed_dim = self.embed_dim;
        spec.validate()?;
        Ok(spec)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            batch: self.batch,
            epochs: self.epochs,
            checkpoint_dir: self.checkpoint_dir.clone(),
            ..TrainConfig::default()
        }
    }

    pub fn session(&self) -> SessionConfig {
        SessionConfig { recv_timeout: Duration::from_secs(self.timeout_secs), ..SessionConfig::with_key_bits(self.key_bits) }
    }

    pub fn seeds(&self) -> (SeedSource, SeedSource) {
        (SeedSource::Fixed(self.seed_a), SeedSource::Fixed(self.seed_b))
    }
}
