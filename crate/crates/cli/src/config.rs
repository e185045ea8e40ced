//! Experiment configuration: a flat TOML file of key = value pairs. Unknown
//! keys are rejected; every run writes the fully resolved config (defaults
//! and flag overrides applied) next to its outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sjsc::codec::CodecConfig;
use sjsc::stego::{InnConfig, LhatMode};
use sjsc::training::LossWeights;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    // model
    pub image_size: usize,
    /// Bandwidth compression ratio as a fraction, e.g. "1/12".
    pub bcr: String,
    pub inn_blocks: usize,
    pub inn_width: usize,

    // run
    pub seed: u64,
    pub out_dir: PathBuf,

    // data: "synthetic" or a directory of .ppm/.png images
    pub dataset: String,
    pub train_size: usize,
    pub test_size: usize,

    // training
    pub codec_epochs: usize,
    pub stego_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_snr_lo_db: f64,
    pub train_snr_hi_db: f64,
    /// λ₁..λ₅
    pub lambda: [f64; 5],
    /// "constant" or "sampled"
    pub lhat_mode: String,

    // evaluation
    pub snr_grid_db: Vec<f64>,
    pub eval_pairs: usize,
    pub mia_pairs: usize,
    pub mia_iters: usize,
    pub mia_lr: f64,
    /// "constant" or "uniform"
    pub mia_init: String,
    pub demo_main_snr_db: f64,
    pub demo_eve_snr_db: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            image_size: 32,
            bcr: "1/12".into(),
            inn_blocks: 8,
            inn_width: 32,
            seed: 42,
            out_dir: PathBuf::from("runs/exp"),
            dataset: "synthetic".into(),
            train_size: 2500,
            test_size: 200,
            codec_epochs: 30,
            stego_epochs: 8,
            batch_size: 32,
            learning_rate: 3e-4,
            train_snr_lo_db: 0.0,
            train_snr_hi_db: 20.0,
            lambda: [1.0, 2.0, 2.0, 1.0, 1.0],
            lhat_mode: "constant".into(),
            snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            eval_pairs: 50,
            mia_pairs: 10,
            mia_iters: 1000,
            mia_lr: 0.02,
            mia_init: "constant".into(),
            demo_main_snr_db: 5.0,
            demo_eve_snr_db: 5.0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Parse the `bcr` fraction.
    pub fn bcr_fraction(&self) -> Result<(u32, u32), CliError> {
        let parts: Vec<&str> = self.bcr.split('/').collect();
        let err = || CliError::config(format!("bcr: expected a fraction like \"1/12\", got \"{}\"", self.bcr));
        if parts.len() != 2 {
            return Err(err());
        }
        let num: u32 = parts[0].trim().parse().map_err(|_| err())?;
        let den: u32 = parts[1].trim().parse().map_err(|_| err())?;
        Ok((num, den))
    }

    pub fn codec_config(&self) -> Result<CodecConfig, CliError> {
        let (num, den) = self.bcr_fraction()?;
        CodecConfig::from_bcr(3, self.image_size, self.image_size, num, den)
            .map_err(CliError::from_core)
    }

    pub fn inn_config(&self) -> Result<InnConfig, CliError> {
        let codec = self.codec_config()?;
        InnConfig::new(codec.k, self.inn_blocks, self.inn_width).map_err(CliError::from_core)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            l1: self.lambda[0],
            l2: self.lambda[1],
            l3: self.lambda[2],
            l4: self.lambda[3],
            l5: self.lambda[4],
        }
    }

    pub fn lhat_mode(&self) -> Result<LhatMode, CliError> {
        match self.lhat_mode.as_str() {
            "constant" => Ok(LhatMode::Constant),
            "sampled" => Ok(LhatMode::Sampled { seed: self.seed }),
            other => Err(CliError::config(format!(
                "lhat_mode: expected \"constant\" or \"sampled\", got \"{other}\""
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.batch_size == 0 || self.train_size == 0 {
            return Err(CliError::config("batch_size and train_size must be >= 1".into()));
        }
        if self.snr_grid_db.is_empty() {
            return Err(CliError::config("snr_grid_db must not be empty".into()));
        }
        if 2 * self.eval_pairs > self.test_size {
            return Err(CliError::config(format!(
                "eval_pairs ({}) needs 2x that many test images; test_size is {}",
                self.eval_pairs, self.test_size
            )));
        }
        if self.mia_pairs > self.eval_pairs {
            return Err(CliError::config(
                "mia_pairs must not exceed eval_pairs".into(),
            ));
        }
        self.codec_config()?;
        self.inn_config()?;
        self.lhat_mode()?;
        self.mia_init()?;
        sjsc::training::LossWeights::validate(&self.loss_weights()).map_err(CliError::from_core)?;
        Ok(())
    }

    pub fn mia_init(&self) -> Result<sjsc::adversary::MiaInit, CliError> {
        match self.mia_init.as_str() {
            "constant" => Ok(sjsc::adversary::MiaInit::ConstantHalf),
            "uniform" => Ok(sjsc::adversary::MiaInit::Uniform),
            other => Err(CliError::config(format!(
                "mia_init: expected \"constant\" or \"uniform\", got \"{other}\""
            ))),
        }
    }

    /// Output directory with the `SJSC_OUT_ROOT` override applied.
    pub fn resolved_out_dir(&self) -> PathBuf {
        match std::env::var_os("SJSC_OUT_ROOT") {
            Some(root) if !root.is_empty() => PathBuf::from(root).join(&self.out_dir),
            _ => self.out_dir.clone(),
        }
    }

    /// Write the fully resolved config next to the run outputs.
    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| CliError::config(format!("serializing resolved config: {e}")))?;
        std::fs::write(dir.join("resolved_config.toml"), text)
            .map_err(|e| CliError::io(format!("{}: {e}", dir.display())))
    }
}
