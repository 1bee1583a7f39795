//! Synthetic corpus generation: the desk-scale stand-in for real datasets.
//!
//! Each class owns a disjoint set of indicator tokens. Every token of a text
//! is an indicator of its class with probability `signal_strength`, and a
//! background token otherwise. With two levels, consecutive classes share a
//! parent group label.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Example};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    /// Examples per class; length must equal `n_classes`.
    pub sizes: Vec<usize>,
    pub vocab_size: usize,
    /// Probability that a token is a class indicator rather than background.
    pub signal_strength: f64,
    /// 1 for flat labels, 2 to group consecutive classes under a parent.
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_indicators")]
    pub indicators_per_class: usize,
    #[serde(default = "default_min_len")]
    pub min_len: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_levels() -> usize {
    1
}

fn default_indicators() -> usize {
    6
}

fn default_min_len() -> usize {
    8
}

fn default_max_len() -> usize {
    16
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.sizes.len() != self.n_classes {
            return Err(Error::Config(format!(
                "{} sizes for {} classes",
                self.sizes.len(),
                self.n_classes
            )));
        }
        if self.sizes.contains(&0) {
            return Err(Error::Config("class sizes must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return Err(Error::Config("signal_strength must be in [0, 1]".into()));
        }
        if !(1..=2).contains(&self.levels) {
            return Err(Error::Config("levels must be 1 or 2".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config("need 1 <= min_len <= max_len".into()));
        }
        let indicators = self.n_classes * self.indicators_per_class;
        if self.vocab_size <= indicators {
            return Err(Error::Config(format!(
                "vocab of {} too small for {indicators} distinct class indicators",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// Deterministic per seed. Token text is plain alphanumerics so the
/// whitespace tokenizer reproduces exactly one token per word.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = spec.vocab_size - spec.n_classes * spec.indicators_per_class;
    let mut examples = Vec::with_capacity(spec.sizes.iter().sum());
    let mut counter = 0usize;
    for (k, &size) in spec.sizes.iter().enumerate() {
        let label_path = match spec.levels {
            1 => vec![format!("class{k}")],
            _ => vec![format!("group{}", k / 2), format!("class{k}")],
        };
        for _ in 0..size {
            counter += 1;
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let mut words = Vec::with_capacity(len);
            for _ in 0..len {
                if rng.random::<f64>() < spec.signal_strength {
                    let j = rng.random_range(0..spec.indicators_per_class);
                    words.push(format!("c{k}i{j}"));
                } else {
                    let b = rng.random_range(0..background);
                    words.push(format!("w{b}"));
                }
            }
            examples.push(Example::new(
                format!("syn{counter:06}"),
                words.join(" "),
                label_path.clone(),
            ));
        }
    }
    Dataset::from_examples(examples, Vec::new())
}

/// Write a dataset as JSONL records.
pub fn write_jsonl(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for ex in ds.examples.iter().chain(ds.unlabelled.iter()) {
        let rec = serde_json::json!({
            "id": ex.id,
            "text": ex.text,
            "labels": ex.label_path,
        });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
