//! `sjsc` — the experiment harness: train the codec and the steganography
//! module, evaluate Bob/Eve reconstruction quality over an SNR grid, run
//! eavesdropper attacks, and produce demo images.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

/// Failure carrying the process exit code: 2 for config errors, 3 for
/// runtime numeric failures, 1 otherwise.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: String) -> Self {
        CliError { code: 2, message }
    }

    pub fn io(message: String) -> Self {
        CliError { code: 1, message }
    }

    pub fn from_core(e: sjsc::Error) -> Self {
        use sjsc::Error::*;
        let code = match &e {
            Config(_) | CheckpointMismatch(_) => 2,
            NonFiniteLoss { .. } | NonFiniteBlock { .. } | DegenerateSignal => 3,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "sjsc",
    about = "Secure semantic image transmission simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flag overrides for config keys. Flags win over the config file.
#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Epoch count for the phase this command trains.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    eval_pairs: Option<usize>,
    #[arg(long)]
    mia_pairs: Option<usize>,
    #[arg(long)]
    mia_iters: Option<usize>,
    /// Override λ₃ (the private-signal reconstruction weight).
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    snr_grid_db: Option<Vec<f64>>,
    #[arg(long)]
    image_size: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig, epochs_field: fn(&mut ExperimentConfig) -> &mut usize) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.epochs {
            *epochs_field(cfg) = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.train_size {
            cfg.train_size = v;
        }
        if let Some(v) = self.test_size {
            cfg.test_size = v;
        }
        if let Some(v) = self.eval_pairs {
            cfg.eval_pairs = v;
        }
        if let Some(v) = self.mia_pairs {
            cfg.mia_pairs = v;
        }
        if let Some(v) = self.mia_iters {
            cfg.mia_iters = v;
        }
        if let Some(v) = self.lambda3 {
            cfg.lambda[2] = v;
        }
        if let Some(v) = &self.snr_grid_db {
            cfg.snr_grid_db = v.clone();
        }
        if let Some(v) = self.image_size {
            cfg.image_size = v;
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Pretrain the semantic encoder/decoder over the noisy channel.
    TrainCodec {
        config: PathBuf,
        #[command(flatten)]
        ov: Overrides,
    },
    /// Train the signal-steganography module against a frozen codec.
    TrainStego {
        config: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[command(flatten)]
        ov: Overrides,
    },
    /// Score Bob and Eve reconstructions over the SNR grid into metrics.csv.
    Evaluate {
        config: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        stego: PathBuf,
        #[command(flatten)]
        ov: Overrides,
    },
    /// Run Eve's naive and model-inversion attacks against the secure
    /// pipeline and the plain baseline.
    Attack {
        config: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        stego: PathBuf,
        #[command(flatten)]
        ov: Overrides,
    },
    /// Transmit one host/private image pair and write every reconstruction.
    Demo {
        config: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        stego: PathBuf,
        host: PathBuf,
        private: PathBuf,
        #[command(flatten)]
        ov: Overrides,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::TrainCodec { config, ov } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            ov.apply(&mut cfg, |c| &mut c.codec_epochs);
            cfg.validate()?;
            commands::train_codec(&cfg)
        }
        Cmd::TrainStego { config, codec, ov } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            ov.apply(&mut cfg, |c| &mut c.stego_epochs);
            cfg.validate()?;
            commands::train_stego(&cfg, &codec)
        }
        Cmd::Evaluate {
            config,
            codec,
            stego,
            ov,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            ov.apply(&mut cfg, |c| &mut c.stego_epochs);
            cfg.validate()?;
            commands::evaluate(&cfg, &codec, &stego)
        }
        Cmd::Attack {
            config,
            codec,
            stego,
            ov,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            ov.apply(&mut cfg, |c| &mut c.stego_epochs);
            cfg.validate()?;
            commands::attack(&cfg, &codec, &stego)
        }
        Cmd::Demo {
            config,
            codec,
            stego,
            host,
            private,
            ov,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            ov.apply(&mut cfg, |c| &mut c.stego_epochs);
            cfg.validate()?;
            commands::demo(&cfg, &codec, &stego, &host, &private)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
