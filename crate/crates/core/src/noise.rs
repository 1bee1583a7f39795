//! Token-level corruption for the denoising phase and stop-word deletion
//! noise for pair augmentation.
//!
//! Corruption operates on token ids and is re-applied freshly at every
//! training step. Stop-word deletion operates on string tokens because its
//! word list is a plain text file.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::corpus::{BOS, EOS, MASK, PAD};
use crate::{Error, Result};

/// Built-in English stop-word list, one token per line.
const BUNDLED_STOPWORDS: &str = include_str!("english_stopwords.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionMode {
    /// Replace corrupted tokens with the MASK id.
    Mask,
    /// Remove corrupted tokens from the sequence.
    Delete,
}

#[derive(Debug, Clone)]
pub struct CorruptionConfig {
    /// Fraction of eligible tokens corrupted, in [0, 1].
    pub ratio: f64,
    pub mode: CorruptionMode,
    /// Reserved ids that are never corrupted.
    pub protect: BTreeSet<u32>,
}

impl CorruptionConfig {
    pub fn new(ratio: f64, mode: CorruptionMode) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::Config(format!(
                "corruption ratio must be in [0, 1], got {ratio}"
            )));
        }
        Ok(CorruptionConfig {
            ratio,
            mode,
            protect: BTreeSet::from([PAD, BOS, EOS]),
        })
    }
}

/// Corrupt each eligible token independently with probability `cfg.ratio`.
/// At least one token always survives in delete mode.
pub fn corrupt_tokens(tokens: &[u32], cfg: &CorruptionConfig, rng: &mut impl Rng) -> Vec<u32> {
    if tokens.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(tokens.len());
    for &tok in tokens {
        let eligible = !cfg.protect.contains(&tok);
        let corrupt = eligible && rng.random::<f64>() < cfg.ratio;
        match (corrupt, cfg.mode) {
            (true, CorruptionMode::Mask) => out.push(MASK),
            (true, CorruptionMode::Delete) => {}
            (false, _) => out.push(tok),
        }
    }
    if out.is_empty() {
        out.push(tokens[0]);
    }
    out
}

#[derive(Debug, Clone)]
pub struct StopwordNoiseConfig {
    pub stopwords: BTreeSet<String>,
    /// Sequences shorter than this pass through unchanged.
    pub min_length: usize,
    /// Probability that each stop-word is removed, in (0, 1].
    pub delete_frac: f64,
}

impl StopwordNoiseConfig {
    pub fn new(stopwords: BTreeSet<String>, min_length: usize, delete_frac: f64) -> Result<Self> {
        if min_length < 1 {
            return Err(Error::Config("min_length must be >= 1".into()));
        }
        if !(delete_frac > 0.0 && delete_frac <= 1.0) {
            return Err(Error::Config(format!(
                "delete_frac must be in (0, 1], got {delete_frac}"
            )));
        }
        Ok(StopwordNoiseConfig { stopwords, min_length, delete_frac })
    }

    /// Bundled English list, min_length 8, delete_frac 0.5.
    pub fn bundled() -> Self {
        StopwordNoiseConfig {
            stopwords: parse_stopword_list(BUNDLED_STOPWORDS),
            min_length: 8,
            delete_frac: 0.5,
        }
    }

    /// Replace the word list with one loaded from a file (one token per line).
    pub fn from_file(path: impl AsRef<Path>, min_length: usize, delete_frac: f64) -> Result<Self> {
        let content = fs::read_to_string(path)?;
        Self::new(parse_stopword_list(&content), min_length, delete_frac)
    }
}

fn parse_stopword_list(content: &str) -> BTreeSet<String> {
    content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Delete stop-words with probability `delete_frac` each, but only when the
/// text is long enough; shorter inputs come back unchanged.
pub fn delete_stopwords(tokens: &[String], cfg: &StopwordNoiseConfig, rng: &mut impl Rng) -> Vec<String> {
    if tokens.len() < cfg.min_length {
        return tokens.to_vec();
    }
    tokens
        .iter()
        .filter(|t| !cfg.stopwords.contains(t.as_str()) || rng.random::<f64>() >= cfg.delete_frac)
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn ratio_zero_is_identity() {
        let cfg = CorruptionConfig::new(0.0, CorruptionMode::Delete).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let toks = vec![5, 6, 7, 8];
        assert_eq!(corrupt_tokens(&toks, &cfg, &mut rng), toks);
    }

    #[test]
    fn ratio_one_masks_every_eligible_token() {
        let cfg = CorruptionConfig::new(1.0, CorruptionMode::Mask).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = corrupt_tokens(&[5, 6, 7, 8, 9], &cfg, &mut rng);
        assert_eq!(out, vec![MASK; 5]);
    }

    #[test]
    fn ratio_one_delete_keeps_one_survivor() {
        let cfg = CorruptionConfig::new(1.0, CorruptionMode::Delete).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = corrupt_tokens(&[5, 6, 7], &cfg, &mut rng);
        assert_eq!(out, vec![5]);
    }

    #[test]
    fn protected_ids_pass_through() {
        let cfg = CorruptionConfig::new(1.0, CorruptionMode::Mask).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = corrupt_tokens(&[BOS, 5, EOS], &cfg, &mut rng);
        assert_eq!(out, vec![BOS, MASK, EOS]);
    }

    #[test]
    fn delete_mode_mean_matches_binomial_expectation() {
        // Binomial(10, 0.6) has mean 6; over 10k trials the sample mean lands
        // within +-0.15 with overwhelming margin (99% CI half-width ~0.04).
        let cfg = CorruptionConfig::new(0.6, CorruptionMode::Delete).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input: Vec<u32> = (5..15).collect();
        let trials = 10_000usize;
        let mut deleted = 0usize;
        for _ in 0..trials {
            let out = corrupt_tokens(&input, &cfg, &mut rng);
            deleted += input.len() - out.len();
        }
        let mean = deleted as f64 / trials as f64;
        assert!((mean - 6.0).abs() <= 0.15, "mean deleted {mean}");
    }

    #[test]
    fn never_emits_empty_sequence() {
        let cfg = CorruptionConfig::new(1.0, CorruptionMode::Delete).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for len in 1..8 {
            let toks: Vec<u32> = (5..5 + len).collect();
            assert!(!corrupt_tokens(&toks, &cfg, &mut rng).is_empty());
        }
    }

    #[test]
    fn short_inputs_skip_stopword_deletion() {
        let cfg = StopwordNoiseConfig::bundled();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let toks = words("the cat sat"); // below min_length 8
        assert_eq!(delete_stopwords(&toks, &cfg, &mut rng), toks);
    }

    #[test]
    fn no_stopwords_means_unchanged() {
        let cfg = StopwordNoiseConfig::bundled();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let toks = words("cat dog bird fish horse cow sheep goat pig");
        assert_eq!(delete_stopwords(&toks, &cfg, &mut rng), toks);
    }

    #[test]
    fn delete_frac_one_removes_exactly_the_stopwords() {
        let mut cfg = StopwordNoiseConfig::bundled();
        cfg.delete_frac = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let toks = words("the cat sat on mat quietly watching a bird land today");
        let out = delete_stopwords(&toks, &cfg, &mut rng);
        let expect = words("cat sat mat quietly watching bird land today");
        assert_eq!(out, expect);
    }

    #[test]
    fn output_is_subsequence_of_input() {
        let cfg = StopwordNoiseConfig::bundled();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let toks = words("the quick brown fox jumps over the lazy dog again and again");
        for _ in 0..100 {
            let out = delete_stopwords(&toks, &cfg, &mut rng);
            let mut it = toks.iter();
            for o in &out {
                assert!(it.any(|t| t == o), "{o} out of order");
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(CorruptionConfig::new(1.5, CorruptionMode::Mask).is_err());
        assert!(StopwordNoiseConfig::new(BTreeSet::new(), 0, 0.5).is_err());
        assert!(StopwordNoiseConfig::new(BTreeSet::new(), 1, 0.0).is_err());
    }
}
