//! Config-driven three-phase training for text classifiers.
//!
//! The pipeline adapts a small transformer encoder to a corpus with a
//! denoising autoencoder, clusters its representation space with supervised
//! Siamese contrastive training (including imbalance-corrected pair
//! generation), and finally fine-tunes a softmax classifier head. A joint
//! variant optimizes the first two objectives together, and an ablation
//! matrix covers every combination of the phases.
//!
//! Modules map onto the pipeline stages:
//! - [`corpus`]: JSONL ingestion, tokenization, stratified splits, stats
//! - [`noise`]: token corruption and stop-word deletion noise
//! - [`balance`]: class resampling and labeled pair generation
//! - [`model`]: the trainable encoder/decoder/classifier stack
//! - [`losses`]: reconstruction, cosine-similarity, cross-entropy, joint
//! - [`train`]: phase orchestration and the ablation variants
//! - [`metrics`]: accuracy, macro precision/recall/F1, confusion matrix
//! - [`synth`]: synthetic corpus generation for desk-scale experiments
//! - [`config`]: the TOML experiment file

pub mod balance;
pub mod config;
pub mod corpus;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod synth;
pub mod train;
pub mod util;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// True for errors caused by bad user input (config, schema, parsing)
    /// rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Schema(_)
                | Error::Config(_)
                | Error::Domain(_)
                | Error::Toml(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
