//! `wadg`: generate synthetic multi-domain data, train with leave-one-domain
//! out, run the ablation grid and export embeddings.
//!
//! Settings resolve as config file < `WADG_*` environment < flags. Exit
//! codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wadg_core::model::CriticMode;
use wadg_core::trainer::{AblationMode, TrainConfig};
use wadg_core::WadgError;

#[derive(Parser, Debug)]
#[command(
    name = "wadg",
    version,
    about = "Wasserstein adversarial domain generalization lab"
)]
struct Cli {
    /// Log progress (repeat for more detail); RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic benchmark as per-domain CSVs plus manifest.json.
    Generate(GenerateArgs),
    /// Train on all domains but the target and evaluate on the target.
    Train(TrainArgs),
    /// Run the (target × mode × seed) ablation grid; resumable.
    Ablate(AblateArgs),
    /// Export classifier embeddings of every domain as CSV.
    DumpEmbeddings(DumpArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Benchmark {
    RotatedMoons,
    ShiftedBlobs,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    benchmark: Benchmark,
    /// Rotation angles in degrees, one domain each (rotated-moons).
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        required_if_eq("benchmark", "rotated-moons")
    )]
    angles: Vec<f64>,
    /// Per-domain translations `x,y;x,y;…` (shifted-blobs).
    #[arg(
        long,
        allow_hyphen_values = true,
        required_if_eq("benchmark", "shifted-blobs")
    )]
    shifts: Option<String>,
    /// Samples per domain.
    #[arg(long, default_value_t = 600)]
    n: usize,
    /// Gaussian noise standard deviation (rotated-moons).
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Number of classes (shifted-blobs).
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Blob standard deviation (shifted-blobs).
    #[arg(long, default_value_t = 0.5)]
    blob_sd: f64,
    #[arg(long, env = "WADG_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Training settings that override the config file.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON training config; unspecified fields take defaults.
    #[arg(long, env = "WADG_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "WADG_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "WADG_EPOCHS")]
    epochs: Option<usize>,
    #[arg(long = "lr", env = "WADG_LR")]
    learning_rate: Option<f64>,
    /// Metric-learning coefficient λ_s.
    #[arg(long, env = "WADG_LAMBDA_S")]
    lambda_s: Option<f64>,
    /// Rows per source domain in each mini-batch.
    #[arg(long, env = "WADG_BATCH")]
    batch: Option<usize>,
    #[arg(long, env = "WADG_CRITIC_STEPS")]
    critic_steps: Option<usize>,
    #[arg(long = "gp", env = "WADG_GP")]
    gp_coefficient: Option<f64>,
    #[arg(long, env = "WADG_PATIENCE")]
    patience: Option<usize>,
    #[arg(long, env = "WADG_CRITIC_MODE", value_parser = parse_critic_mode)]
    critic_mode: Option<CriticMode>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, env = "WADG_MANIFEST")]
    manifest: PathBuf,
    /// Held-out domain id.
    #[arg(long)]
    target: String,
    /// deep-all, no-ld, no-lms or wadg-all.
    #[arg(long, env = "WADG_MODE", value_parser = parse_mode)]
    mode: Option<AblationMode>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long, env = "WADG_MANIFEST")]
    manifest: PathBuf,
    /// Seeds per cell, counting up from the config seed.
    #[arg(long, env = "WADG_SEEDS", default_value_t = 3)]
    seeds: usize,
    /// Held-out domains (default: all).
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
    /// Modes to run (default: all four).
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    modes: Vec<AblationMode>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, env = "WADG_MANIFEST")]
    manifest: PathBuf,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<AblationMode, WadgError> {
    s.parse()
}

fn parse_critic_mode(s: &str) -> Result<CriticMode, String> {
    match s {
        "per-pair" => Ok(CriticMode::PerPair),
        "shared" => Ok(CriticMode::Shared),
        _ => Err(format!(
            "unknown critic mode `{s}` (expected per-pair or shared)"
        )),
    }
}

impl Overrides {
    fn resolve(&self, mode: Option<AblationMode>) -> anyhow::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| WadgError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| WadgError::Config(format!("{}: {e}", p.display())))?
            }
            None => TrainConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.lambda_s {
            cfg.lambda_s = v;
        }
        if let Some(v) = self.batch {
            cfg.per_domain_batch = v;
        }
        if let Some(v) = self.critic_steps {
            cfg.critic_steps = v;
        }
        if let Some(v) = self.gp_coefficient {
            cfg.gp_coefficient = v;
        }
        if let Some(v) = self.patience {
            cfg.patience = v;
        }
        if let Some(v) = self.critic_mode {
            cfg.critic_mode = v;
        }
        if let Some(m) = mode {
            cfg.mode = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|e| {
        e.downcast_ref::<WadgError>()
            .is_some_and(WadgError::is_usage)
    });
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::DumpEmbeddings(a) => commands::dump_embeddings(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
