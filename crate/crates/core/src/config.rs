//! The experiment file: one self-describing TOML document per experiment.
//! CLI flags override file keys; defaults are desk-scale.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::noise::CorruptionMode;
use crate::synth::SyntheticSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_variants")]
    pub variants: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Joined under the output root (`TRIPHASE_OUT` or the cwd).
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            variants: default_variants(),
            seeds: default_seeds(),
            output_dir: None,
        }
    }
}

fn default_variants() -> Vec<String> {
    vec!["3phase".into()]
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// JSONL dataset path; mutually exclusive with `synthetic`.
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    /// Seed for generating the synthetic corpus (not the run seed).
    #[serde(default = "default_data_seed")]
    pub synthetic_seed: u64,
    #[serde(default = "default_val_frac")]
    pub val_frac: f64,
    #[serde(default = "default_test_frac")]
    pub test_frac: f64,
    #[serde(default = "default_max_vocab")]
    pub max_vocab: usize,
    /// Optional stop-word list file overriding the bundled one.
    #[serde(default)]
    pub stopword_file: Option<String>,
}

fn default_data_seed() -> u64 {
    0
}

fn default_val_frac() -> f64 {
    0.2
}

fn default_test_frac() -> f64 {
    0.2
}

fn default_max_vocab() -> usize {
    8000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub max_positions: usize,
    pub ffn_mult: usize,
    pub decoder_blocks: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let desk = ModelConfig::desk(0);
        ModelSection {
            hidden_dim: desk.hidden_dim,
            n_blocks: desk.n_blocks,
            n_heads: desk.n_heads,
            max_positions: desk.max_positions,
            ffn_mult: desk.ffn_mult,
            decoder_blocks: desk.decoder_blocks,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            hidden_dim: self.hidden_dim,
            n_blocks: self.n_blocks,
            n_heads: self.n_heads,
            max_positions: self.max_positions,
            ffn_mult: self.ffn_mult,
            decoder_blocks: self.decoder_blocks,
            activation: "gelu".into(),
            pooling: "mean".into(),
        }
    }
}

/// Maximum sequence length policy: estimate from the data or a fixed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UseLength {
    Fixed(usize),
    /// "auto": max length over a 10% sample, times 1.2, capped by the model.
    Auto(String),
}

impl Default for UseLength {
    fn default() -> Self {
        UseLength::Auto("auto".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_lr")]
    pub learning_rate_dae: f64,
    #[serde(default = "default_lr")]
    pub learning_rate_cl: f64,
    #[serde(default = "default_lr")]
    pub learning_rate_ft: f64,
    #[serde(default = "default_epochs_p12")]
    pub epochs_dae: usize,
    #[serde(default = "default_epochs_p12")]
    pub epochs_cl: usize,
    #[serde(default = "default_max_epochs_ft")]
    pub max_epochs_ft: usize,
    #[serde(default = "default_patience_ft")]
    pub patience_ft: usize,
    #[serde(default = "default_batch")]
    pub batch_size_dae: usize,
    #[serde(default = "default_batch")]
    pub batch_size_cl: usize,
    #[serde(default = "default_batch")]
    pub batch_size_ft: usize,
    /// AdamW epsilon for phases 1-2 (framework default).
    #[serde(default = "default_eps_p12")]
    pub eps_dae_cl: f64,
    /// AdamW epsilon for the fine-tuning phase.
    #[serde(default = "default_eps_ft")]
    pub eps_ft: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub use_length: UseLength,
    #[serde(default)]
    pub freeze_encoder: bool,
    /// Fraction of tokens corrupted in the denoising phase.
    #[serde(default = "default_deleting_ratio")]
    pub deleting_ratio: f64,
    #[serde(default = "default_noise_mode")]
    pub noise_mode: CorruptionMode,
    #[serde(default = "default_min_ratio")]
    pub min_ratio: f64,
    #[serde(default = "default_max_ratio")]
    pub max_ratio: f64,
    /// 0 means automatic (one pair per balanced example).
    #[serde(default)]
    pub max_pairs: usize,
    #[serde(default = "default_stopword_min_length")]
    pub stopword_min_length: usize,
    #[serde(default = "default_stopword_delete_frac")]
    pub stopword_delete_frac: f64,
    /// Repeat the denoising training data this many times per epoch to give
    /// the first phase more weight without changing the epoch count.
    #[serde(default = "default_data_repeat")]
    pub data_repeat_dae: usize,
    #[serde(default = "default_joint_weight")]
    pub joint_weight_dae: f64,
    #[serde(default = "default_joint_weight")]
    pub joint_weight_cl: f64,
    #[serde(default = "default_length_sample_frac")]
    pub length_sample_frac: f64,
    #[serde(default = "default_length_factor")]
    pub length_factor: f64,
}

fn default_lr() -> f64 {
    1e-3
}

fn default_epochs_p12() -> usize {
    4
}

fn default_max_epochs_ft() -> usize {
    24
}

fn default_patience_ft() -> usize {
    5
}

fn default_batch() -> usize {
    32
}

fn default_eps_p12() -> f64 {
    1e-6
}

fn default_eps_ft() -> f64 {
    2e-5
}

fn default_weight_decay() -> f64 {
    0.0
}

fn default_deleting_ratio() -> f64 {
    0.6
}

fn default_noise_mode() -> CorruptionMode {
    CorruptionMode::Delete
}

fn default_min_ratio() -> f64 {
    1.5
}

fn default_max_ratio() -> f64 {
    4.0
}

fn default_stopword_min_length() -> usize {
    8
}

fn default_stopword_delete_frac() -> f64 {
    0.5
}

fn default_data_repeat() -> usize {
    1
}

fn default_joint_weight() -> f64 {
    1.0
}

fn default_length_sample_frac() -> f64 {
    0.1
}

fn default_length_factor() -> f64 {
    1.2
}

impl Default for TrainingConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults are total")
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("learning_rate_dae", self.learning_rate_dae),
            ("learning_rate_cl", self.learning_rate_cl),
            ("learning_rate_ft", self.learning_rate_ft),
        ] {
            if lr <= 0.0 {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        for (name, b) in [
            ("batch_size_dae", self.batch_size_dae),
            ("batch_size_cl", self.batch_size_cl),
            ("batch_size_ft", self.batch_size_ft),
        ] {
            if b == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.patience_ft >= self.max_epochs_ft {
            return Err(Error::Config(format!(
                "patience_ft {} must be below max_epochs_ft {}",
                self.patience_ft, self.max_epochs_ft
            )));
        }
        if !(0.0..=1.0).contains(&self.deleting_ratio) {
            return Err(Error::Config("deleting_ratio must be in [0, 1]".into()));
        }
        if self.min_ratio > self.max_ratio {
            return Err(Error::Config(format!(
                "min_ratio {} exceeds max_ratio {}",
                self.min_ratio, self.max_ratio
            )));
        }
        if self.data_repeat_dae == 0 {
            return Err(Error::Config("data_repeat_dae must be >= 1".into()));
        }
        Ok(())
    }

    pub fn max_pairs_option(&self) -> Option<usize> {
        (self.max_pairs > 0).then_some(self.max_pairs)
    }
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let content = fs::read_to_string(path)?;
        Self::from_toml(&content)
    }

    pub fn from_toml(content: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(content)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.variants.is_empty() {
            return Err(Error::Config("need at least one variant".into()));
        }
        if self.experiment.seeds.is_empty() {
            return Err(Error::Config("need at least one seed".into()));
        }
        match (&self.data.path, &self.data.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "data.path and data.synthetic are mutually exclusive".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "one of data.path or data.synthetic is required".into(),
                ))
            }
            _ => {}
        }
        if let Some(synth) = &self.data.synthetic {
            synth.validate()?;
        }
        if self.data.val_frac < 0.0
            || self.data.test_frac < 0.0
            || self.data.val_frac + self.data.test_frac >= 1.0
        {
            return Err(Error::Config("split fractions must be >= 0 and sum below 1".into()));
        }
        self.training.validate()?;
        Ok(())
    }
}
