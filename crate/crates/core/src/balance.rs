//! Imbalance-corrected class resampling and supervised pair generation for
//! the contrastive phase.
//!
//! Small classes are upsampled by a log-ratio of their size against the
//! largest class, clamped to `[min_ratio, max_ratio]`. Extra copies carry
//! stop-word-deletion noise. Pairs come from zipping two independently
//! shuffled copies of the balanced set, deduplicated as unordered pairs.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{tokenize_text, Example, Vocab};
use crate::noise::{delete_stopwords, StopwordNoiseConfig};
use crate::util::round_half_up;
use crate::{Error, Result};

/// Resampling ratio for a class of size `x` against the largest class:
/// `log(max_k / x) * max_ratio / log(max_k)`. The log base cancels out.
///
/// By construction `f(1) = max_ratio`, `f(max_k) = 0`, and the ratio crosses
/// 1 exactly at `max_k^((max_ratio - 1) / max_ratio)`.
pub fn ratio_function(x: f64, max_k: f64, max_ratio: f64) -> Result<f64> {
    if x <= 0.0 {
        return Err(Error::Domain(format!("class size must be positive, got {x}")));
    }
    if max_k < 2.0 {
        return Err(Error::Domain(
            "largest class must have at least 2 examples".into(),
        ));
    }
    Ok((max_k / x).ln() * max_ratio / max_k.ln())
}

/// Per-class resampling ratios and target counts.
#[derive(Debug, Clone)]
pub struct BalancePlan {
    pub class_sizes: BTreeMap<Vec<String>, usize>,
    pub max_k: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub ratios: BTreeMap<Vec<String>, f64>,
    pub targets: BTreeMap<Vec<String>, usize>,
}

impl BalancePlan {
    /// max/min over class counts; `None` when any class is empty.
    fn imbalance(counts: impl Iterator<Item = usize>) -> Option<f64> {
        let v: Vec<usize> = counts.collect();
        let max = *v.iter().max()?;
        let min = *v.iter().min()?;
        (min > 0).then(|| max as f64 / min as f64)
    }

    pub fn raw_imbalance(&self) -> f64 {
        Self::imbalance(self.class_sizes.values().copied()).unwrap_or(f64::INFINITY)
    }

    pub fn target_imbalance(&self) -> f64 {
        Self::imbalance(self.targets.values().copied()).unwrap_or(f64::INFINITY)
    }
}

/// Clamp the ratio function into `[min_ratio, max_ratio]` per class and round
/// targets half-up.
pub fn plan_balance(
    class_sizes: &BTreeMap<Vec<String>, usize>,
    min_ratio: f64,
    max_ratio: f64,
) -> Result<BalancePlan> {
    if min_ratio > max_ratio {
        return Err(Error::Config(format!(
            "min_ratio {min_ratio} exceeds max_ratio {max_ratio}"
        )));
    }
    if class_sizes.len() < 2 {
        return Err(Error::Domain("need at least 2 classes to balance".into()));
    }
    if class_sizes.values().any(|&s| s == 0) {
        return Err(Error::Domain("every class must have at least 1 example".into()));
    }
    let max_k = *class_sizes.values().max().expect("non-empty");
    let mut ratios = BTreeMap::new();
    let mut targets = BTreeMap::new();
    for (path, &size) in class_sizes {
        let f = ratio_function(size as f64, max_k as f64, max_ratio)?;
        let ratio = f.clamp(min_ratio, max_ratio);
        ratios.insert(path.clone(), ratio);
        targets.insert(path.clone(), round_half_up(ratio * size as f64));
    }
    Ok(BalancePlan {
        class_sizes: class_sizes.clone(),
        max_k,
        min_ratio,
        max_ratio,
        ratios,
        targets,
    })
}

/// Grow a class to `target` examples. Originals are kept; the extra slots
/// are noised copies of originals cycled in a shuffled round-robin order.
pub fn augment_class(
    examples: &[Example],
    target: usize,
    noiser: &StopwordNoiseConfig,
    vocab: &Vocab,
    rng: &mut impl Rng,
) -> Result<Vec<Example>> {
    if examples.is_empty() {
        return Err(Error::Domain("cannot augment an empty class".into()));
    }
    if target < examples.len() {
        return Err(Error::Config(format!(
            "augment target {target} below current class size {}",
            examples.len()
        )));
    }
    let mut out = examples.to_vec();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    for i in 0..target - examples.len() {
        let src = &examples[order[i % order.len()]];
        let words = tokenize_text(&src.text);
        let noised = delete_stopwords(&words, noiser, rng);
        let text = noised.join(" ");
        let mut copy = Example::new(format!("{}#a{}", src.id, i + 1), text, src.label_path.clone());
        copy.tokens = vocab.encode(&noised);
        copy.augmented_from = Some(src.id.clone());
        out.push(copy);
    }
    Ok(out)
}

/// A pair of examples (indices into the balanced set) with a similarity
/// label in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub left: usize,
    pub right: usize,
    pub similarity: f64,
    pub left_augmented: bool,
    pub right_augmented: bool,
}

/// Fraction of matching label-hierarchy prefix levels between two paths:
/// 1 for the same class, 0 for fully distinct, k/L for a k-level match.
pub fn similarity_label(path_u: &[String], path_v: &[String], levels: usize) -> Result<f64> {
    if path_u.len() != levels || path_v.len() != levels {
        return Err(Error::Domain(format!(
            "label paths must both have {levels} levels (got {} and {})",
            path_u.len(),
            path_v.len()
        )));
    }
    let matching = path_u
        .iter()
        .zip(path_v.iter())
        .take_while(|(a, b)| a == b)
        .count();
    Ok(matching as f64 / levels as f64)
}

/// Zip two independently shuffled copies of the examples into candidate
/// pairs, drop self-pairs and unordered duplicates, and repeat the pass
/// until `max_pairs` (default: one pair per example) or all unique pairs
/// are exhausted. Deterministic given the generator state.
pub fn make_pairs(
    examples: &[Example],
    levels: usize,
    max_pairs: Option<usize>,
    rng: &mut impl Rng,
) -> Result<Vec<LabeledPair>> {
    let n = examples.len();
    if n < 2 {
        return Ok(Vec::new());
    }
    let target = max_pairs.unwrap_or(n);
    let total_unique = n * (n - 1) / 2;
    let target = target.min(total_unique);

    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut pairs = Vec::with_capacity(target);
    let mut left_order: Vec<usize> = (0..n).collect();
    let mut right_order: Vec<usize> = (0..n).collect();
    // A pass can stall by chance; bound the retries.
    let max_passes = 16 + 4 * (target / n.max(1));
    for _ in 0..max_passes {
        if pairs.len() >= target {
            break;
        }
        left_order.shuffle(rng);
        right_order.shuffle(rng);
        for (&a, &b) in left_order.iter().zip(right_order.iter()) {
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                continue;
            }
            let sim = similarity_label(&examples[a].label_path, &examples[b].label_path, levels)?;
            pairs.push(LabeledPair {
                left: a,
                right: b,
                similarity: sim,
                left_augmented: examples[a].is_augmented(),
                right_augmented: examples[b].is_augmented(),
            });
            if pairs.len() >= target {
                break;
            }
        }
        if seen.len() >= total_unique {
            break;
        }
    }
    Ok(pairs)
}

/// Pair-generation settings for the contrastive phase.
#[derive(Debug, Clone)]
pub struct PairSettings {
    /// When false the balancing step is skipped and pairs come from the raw
    /// class distribution.
    pub correction: bool,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub noiser: StopwordNoiseConfig,
    pub max_pairs: Option<usize>,
}

impl PairSettings {
    pub fn standard() -> Self {
        PairSettings {
            correction: true,
            min_ratio: 1.5,
            max_ratio: 4.0,
            noiser: StopwordNoiseConfig::bundled(),
            max_pairs: None,
        }
    }
}

/// Balance (optionally), augment, and pair a labelled split in one step.
/// Returns the balanced example set, the pairs over it, and the plan used.
pub fn build_training_pairs(
    examples: &[Example],
    class_index: &BTreeMap<Vec<String>, Vec<usize>>,
    levels: usize,
    vocab: &Vocab,
    settings: &PairSettings,
    rng: &mut impl Rng,
) -> Result<(Vec<Example>, Vec<LabeledPair>, Option<BalancePlan>)> {
    if class_index.len() < 2 {
        return Err(Error::Domain(
            "contrastive pairing needs at least 2 classes".into(),
        ));
    }
    let (balanced, plan) = if settings.correction {
        let sizes: BTreeMap<Vec<String>, usize> = class_index
            .iter()
            .map(|(k, v)| (k.clone(), v.len()))
            .collect();
        let plan = plan_balance(&sizes, settings.min_ratio, settings.max_ratio)?;
        let mut balanced = Vec::new();
        for (path, members) in class_index {
            let class: Vec<Example> = members.iter().map(|&i| examples[i].clone()).collect();
            let target = plan.targets[path].max(class.len());
            balanced.extend(augment_class(&class, target, &settings.noiser, vocab, rng)?);
        }
        (balanced, Some(plan))
    } else {
        (examples.to_vec(), None)
    };
    let pairs = make_pairs(&balanced, levels, settings.max_pairs, rng)?;
    Ok((balanced, pairs, plan))
}

/// JSONL dump of pairs for inspection: `{"left_id", "right_id", "similarity"}`.
pub fn dump_pairs(pairs: &[LabeledPair], examples: &[Example]) -> String {
    let mut out = String::new();
    for p in pairs {
        let line = serde_json::json!({
            "left_id": examples[p.left].id,
            "right_id": examples[p.right].id,
            "similarity": p.similarity,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    out
}
