//! Dataset ingestion, tokenization, stratified splitting, and corpus stats.
//!
//! The single ingestion format is JSONL, one record per line:
//! `{"id": optional string, "text": string, "labels": [string, ...]}`.
//! A record with an empty `labels` array is kept in an unlabelled pool that
//! only the denoising phase may consume.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const BOS: u32 = 3;
pub const EOS: u32 = 4;
pub const RESERVED_TOKENS: [&str; 5] = ["<pad>", "<unk>", "<mask>", "<bos>", "<eos>"];

/// One text sample with its hierarchical label path.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub text: String,
    /// One label per hierarchy level; length equals the dataset's level count.
    pub label_path: Vec<String>,
    /// Token ids, attached by tokenization. Empty until then.
    pub tokens: Vec<u32>,
    /// Id of the source example when this is a noised augmentation copy.
    pub augmented_from: Option<String>,
}

impl Example {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label_path: Vec<String>) -> Self {
        Example {
            id: id.into(),
            text: text.into(),
            label_path,
            tokens: Vec::new(),
            augmented_from: None,
        }
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented_from.is_some()
    }
}

/// Token to id mapping with dense ids; ids 0..5 are reserved.
#[derive(Debug, Clone)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Build a vocabulary from token streams, keeping the most frequent
    /// tokens up to `max_vocab` total entries (reserved included). Ties
    /// break alphabetically so identical corpora give identical vocabs.
    pub fn build<'a>(token_seqs: impl Iterator<Item = &'a [String]>, max_vocab: usize) -> Result<Self> {
        if max_vocab <= RESERVED_TOKENS.len() {
            return Err(Error::Config(format!(
                "max_vocab must exceed the {} reserved tokens",
                RESERVED_TOKENS.len()
            )));
        }
        let mut counts: HashMap<&'a str, u64> = HashMap::new();
        let mut any = false;
        for seq in token_seqs {
            any = true;
            for tok in seq {
                *counts.entry(tok.as_str()).or_insert(0) += 1;
            }
        }
        if !any {
            return Err(Error::Schema("empty corpus".into()));
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_vocab - RESERVED_TOKENS.len());

        let mut id_to_token: Vec<String> =
            RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(ranked.iter().map(|(t, _)| t.to_string()));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocab { token_to_id, id_to_token })
    }

    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.id_to_token
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or("<unk>")
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }
}

/// Lowercased whitespace-plus-punctuation splitting. Alphanumeric runs are
/// tokens; every other non-space character is a single-character token.
pub fn tokenize_text(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// A collection of examples plus vocabulary and label hierarchy.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub examples: Vec<Example>,
    /// Records ingested with an empty label list; usable by phase 1 only.
    pub unlabelled: Vec<Example>,
    /// Number of label hierarchy levels.
    pub levels: usize,
    /// Full label path -> indices into `examples`.
    pub class_index: BTreeMap<Vec<String>, Vec<usize>>,
    pub vocab: Option<Vocab>,
}

impl Dataset {
    pub fn from_examples(examples: Vec<Example>, unlabelled: Vec<Example>) -> Result<Self> {
        let levels = examples
            .first()
            .map(|e| e.label_path.len())
            .ok_or_else(|| Error::Schema("dataset has no labelled examples".into()))?;
        for ex in &examples {
            if ex.label_path.len() != levels {
                return Err(Error::Schema(format!(
                    "example {} has {} label levels, expected {}",
                    ex.id,
                    ex.label_path.len(),
                    levels
                )));
            }
            if ex.text.is_empty() {
                return Err(Error::Schema(format!("example {} has empty text", ex.id)));
            }
        }
        let mut ds = Dataset {
            examples,
            unlabelled,
            levels,
            class_index: BTreeMap::new(),
            vocab: None,
        };
        ds.rebuild_index();
        Ok(ds)
    }

    pub fn rebuild_index(&mut self) {
        self.class_index.clear();
        for (i, ex) in self.examples.iter().enumerate() {
            self.class_index
                .entry(ex.label_path.clone())
                .or_default()
                .push(i);
        }
    }

    pub fn n_examples(&self) -> usize {
        self.examples.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_index.len()
    }

    /// Class label paths in deterministic (sorted) order. The position of a
    /// path in this list is its class id for classification.
    pub fn class_paths(&self) -> Vec<Vec<String>> {
        self.class_index.keys().cloned().collect()
    }

    /// Sizes per class in the same order as [`Dataset::class_paths`].
    pub fn class_sizes(&self) -> BTreeMap<Vec<String>, usize> {
        self.class_index
            .iter()
            .map(|(k, v)| (k.clone(), v.len()))
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: Option<String>,
    text: Option<String>,
    labels: Option<Vec<String>>,
}

/// Load a JSONL dataset. Level count is inferred from the first labelled
/// record; every other record must match it.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let content = fs::read_to_string(path.as_ref())?;
    parse_jsonl(&content)
}

/// Parse JSONL content; line numbers are 1-based in errors.
pub fn parse_jsonl(content: &str) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut unlabelled = Vec::new();
    let mut levels: Option<usize> = None;
    let mut counter = 0usize;
    for (lineno, line) in content.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let text = raw.text.ok_or(Error::Parse {
            line: line_no,
            msg: "missing \"text\" field".into(),
        })?;
        if text.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty \"text\" field".into(),
            });
        }
        let labels = raw.labels.ok_or(Error::Parse {
            line: line_no,
            msg: "missing \"labels\" field".into(),
        })?;
        counter += 1;
        let id = raw.id.unwrap_or_else(|| format!("ex{counter:06}"));
        if labels.is_empty() {
            unlabelled.push(Example::new(id, text, Vec::new()));
            continue;
        }
        match levels {
            None => levels = Some(labels.len()),
            Some(l) if l != labels.len() => {
                return Err(Error::Schema(format!(
                    "line {line_no}: record has {} label levels, expected {l}",
                    labels.len()
                )))
            }
            _ => {}
        }
        examples.push(Example::new(id, text, labels));
    }
    Dataset::from_examples(examples, unlabelled)
}

/// Stratified split by full label path. Deterministic given the seed;
/// unlabelled examples always stay with the train split.
pub fn split_dataset(
    ds: &Dataset,
    val_frac: f64,
    test_frac: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    if val_frac < 0.0 || test_frac < 0.0 || val_frac + test_frac >= 1.0 {
        return Err(Error::Config(format!(
            "split fractions must be >= 0 and sum below 1 (got val={val_frac}, test={test_frac})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (path, members) in &ds.class_index {
        let mut order = members.clone();
        order.shuffle(&mut rng);
        let n = order.len();
        let mut n_val = crate::util::round_half_up(val_frac * n as f64);
        let mut n_test = crate::util::round_half_up(test_frac * n as f64);
        if n_val + n_test >= n {
            eprintln!(
                "warning: class {:?} has only {n} examples for its split slots; best-effort assignment",
                path.join("/")
            );
            // keep at least one training example per class
            while n_val + n_test >= n && n_test > 0 {
                n_test -= 1;
            }
            while n_val + n_test >= n && n_val > 0 {
                n_val -= 1;
            }
        }
        test_idx.extend(order.drain(..n_test));
        val_idx.extend(order.drain(..n_val));
        train_idx.extend(order);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    test_idx.sort_unstable();

    let pick = |idx: &[usize]| -> Vec<Example> {
        idx.iter().map(|&i| ds.examples[i].clone()).collect()
    };
    let mk = |examples: Vec<Example>, unlabelled: Vec<Example>| -> Dataset {
        let mut split = Dataset {
            examples,
            unlabelled,
            levels: ds.levels,
            class_index: BTreeMap::new(),
            vocab: ds.vocab.clone(),
        };
        split.rebuild_index();
        split
    };
    Ok((
        mk(pick(&train_idx), ds.unlabelled.clone()),
        mk(pick(&val_idx), Vec::new()),
        mk(pick(&test_idx), Vec::new()),
    ))
}

/// Build a vocabulary from this dataset and attach token-id sequences to
/// every example (unlabelled pool included).
pub fn build_vocab_and_tokenize(ds: &mut Dataset, max_vocab: usize) -> Result<()> {
    if ds.examples.is_empty() && ds.unlabelled.is_empty() {
        return Err(Error::Schema("empty corpus".into()));
    }
    let token_seqs: Vec<Vec<String>> = ds
        .examples
        .iter()
        .chain(ds.unlabelled.iter())
        .map(|e| tokenize_text(&e.text))
        .collect();
    let vocab = Vocab::build(token_seqs.iter().map(|s| s.as_slice()), max_vocab)?;
    let n = ds.examples.len();
    for (i, toks) in token_seqs.iter().enumerate() {
        let ids = encode_non_empty(&vocab, toks);
        if i < n {
            ds.examples[i].tokens = ids;
        } else {
            ds.unlabelled[i - n].tokens = ids;
        }
    }
    ds.vocab = Some(vocab);
    Ok(())
}

// A whitespace-only text would tokenize to nothing; give it a single UNK so
// every example stays encodable.
fn encode_non_empty(vocab: &Vocab, toks: &[String]) -> Vec<u32> {
    let ids = vocab.encode(toks);
    if ids.is_empty() {
        vec![UNK]
    } else {
        ids
    }
}

/// Tokenize a dataset with an existing vocabulary (out-of-vocab -> UNK).
pub fn tokenize_with_vocab(ds: &mut Dataset, vocab: &Vocab) {
    for ex in ds.examples.iter_mut().chain(ds.unlabelled.iter_mut()) {
        ex.tokens = encode_non_empty(vocab, &tokenize_text(&ex.text));
    }
    ds.vocab = Some(vocab.clone());
}

/// Estimate a truncation length: `ceil(factor * max token length)` over a
/// deterministic sample of `ceil(sample_frac * N)` sequences, capped.
pub fn estimate_max_length(ds: &Dataset, sample_frac: f64, factor: f64, cap: usize) -> Result<usize> {
    if !(sample_frac > 0.0 && sample_frac <= 1.0) {
        return Err(Error::Config(format!(
            "sample_frac must be in (0, 1], got {sample_frac}"
        )));
    }
    if ds.vocab.is_none() {
        return Err(Error::Schema("dataset is not tokenized".into()));
    }
    let total = ds.examples.len() + ds.unlabelled.len();
    if total == 0 {
        return Err(Error::Schema("empty corpus".into()));
    }
    let take = ((sample_frac * total as f64).ceil() as usize).clamp(1, total);
    let max_len = ds
        .examples
        .iter()
        .chain(ds.unlabelled.iter())
        .take(take)
        .map(|e| e.tokens.len())
        .max()
        .unwrap_or(0);
    let est = (factor * max_len as f64).ceil() as usize;
    Ok(est.clamp(1, cap))
}

/// Per-split statistics, mirroring the usual corpus summary tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub unlabelled_count: usize,
    pub avg_length: f64,
    pub max_length: usize,
    pub per_class: BTreeMap<String, usize>,
    pub empty: bool,
}

pub fn compute_stats(ds: &Dataset) -> CorpusStats {
    let count = ds.examples.len();
    if count == 0 {
        return CorpusStats {
            count: 0,
            unlabelled_count: ds.unlabelled.len(),
            avg_length: 0.0,
            max_length: 0,
            per_class: BTreeMap::new(),
            empty: true,
        };
    }
    let lens: Vec<usize> = ds.examples.iter().map(|e| e.tokens.len()).collect();
    let total: usize = lens.iter().sum();
    CorpusStats {
        count,
        unlabelled_count: ds.unlabelled.len(),
        avg_length: total as f64 / count as f64,
        max_length: lens.iter().copied().max().unwrap_or(0),
        per_class: ds
            .class_index
            .iter()
            .map(|(k, v)| (k.join("/"), v.len()))
            .collect(),
        empty: false,
    }
}

/// Plain-text stats table over named splits; averages shown to 1 decimal.
pub fn stats_table(splits: &[(&str, &CorpusStats)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:>8} {:>12} {:>12} {:>12}", "Split", "Count", "Unlabelled", "Avg. Length", "Max. Length");
    for (name, s) in splits {
        let _ = writeln!(
            out,
            "{:<12} {:>8} {:>12} {:>12.1} {:>12}",
            name, s.count, s.unlabelled_count, s.avg_length, s.max_length
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jsonl_3x1() -> &'static str {
        r#"{"id": "a", "text": "hello world", "labels": ["pos"]}
{"id": "b", "text": "bye world", "labels": ["neg"]}
{"id": "c", "text": "what a world", "labels": ["pos"]}"#
    }

    #[test]
    fn load_three_records_one_level() {
        let ds = parse_jsonl(jsonl_3x1()).unwrap();
        assert_eq!(ds.examples.len(), 3);
        assert_eq!(ds.levels, 1);
        assert_eq!(ds.n_classes(), 2);
    }

    #[test]
    fn two_level_labels_give_path_of_length_two() {
        let ds = parse_jsonl(r#"{"text": "x y", "labels": ["World", "Politics"]}"#).unwrap();
        assert_eq!(ds.examples[0].label_path.len(), 2);
        assert_eq!(ds.levels, 2);
    }

    #[test]
    fn missing_text_is_parse_error_with_line() {
        let bad = "{\"text\": \"ok\", \"labels\": [\"a\"]}\n{\"labels\": [\"a\"]}";
        match parse_jsonl(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_label_depth_is_schema_error() {
        let bad = "{\"text\": \"a\", \"labels\": [\"x\"]}\n{\"text\": \"b\", \"labels\": [\"x\", \"y\"]}";
        assert!(matches!(parse_jsonl(bad), Err(Error::Schema(_))));
    }

    #[test]
    fn empty_labels_go_to_unlabelled_pool() {
        let src = "{\"text\": \"a\", \"labels\": [\"x\"]}\n{\"text\": \"b\", \"labels\": []}";
        let ds = parse_jsonl(src).unwrap();
        assert_eq!(ds.examples.len(), 1);
        assert_eq!(ds.unlabelled.len(), 1);
    }

    fn synthetic(n: usize) -> Dataset {
        let examples = (0..n)
            .map(|i| {
                Example::new(
                    format!("e{i}"),
                    format!("tok{} tok{} filler", i % 7, i % 3),
                    vec![format!("c{}", i % 2)],
                )
            })
            .collect();
        Dataset::from_examples(examples, Vec::new()).unwrap()
    }

    #[test]
    fn split_eighty_twenty() {
        let ds = synthetic(100);
        let (train, val, test) = split_dataset(&ds, 0.2, 0.0, 11).unwrap();
        assert_eq!(train.examples.len(), 80);
        assert_eq!(val.examples.len(), 20);
        assert_eq!(test.examples.len(), 0);
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let ds = synthetic(53);
        let (t1, v1, s1) = split_dataset(&ds, 0.2, 0.1, 42).unwrap();
        let (t2, v2, s2) = split_dataset(&ds, 0.2, 0.1, 42).unwrap();
        let ids = |d: &Dataset| d.examples.iter().map(|e| e.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&t1), ids(&t2));
        assert_eq!(ids(&v1), ids(&v2));
        assert_eq!(ids(&s1), ids(&s2));

        let mut all: Vec<String> = ids(&t1);
        all.extend(ids(&v1));
        all.extend(ids(&s1));
        all.sort();
        let mut orig: Vec<String> = ds.examples.iter().map(|e| e.id.clone()).collect();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_val_zero_keeps_all_in_train() {
        let ds = synthetic(40);
        let (train, val, test) = split_dataset(&ds, 0.0, 0.0, 1).unwrap();
        assert_eq!(train.examples.len(), 40);
        assert!(val.examples.is_empty() && test.examples.is_empty());
    }

    #[test]
    fn vocab_contains_corpus_tokens_plus_reserved() {
        let mut ds = Dataset::from_examples(
            vec![
                Example::new("1", "a b", vec!["x".into()]),
                Example::new("2", "a c", vec!["x".into()]),
            ],
            Vec::new(),
        )
        .unwrap();
        build_vocab_and_tokenize(&mut ds, 10).unwrap();
        let v = ds.vocab.as_ref().unwrap();
        assert_eq!(v.len(), 8); // 5 reserved + a, b, c
        assert_ne!(v.id("a"), UNK);
        assert_ne!(v.id("b"), UNK);
        assert_ne!(v.id("c"), UNK);
        assert_eq!(v.id("zzz"), UNK);
    }

    #[test]
    fn tokenization_is_idempotent_and_consistent() {
        let toks = tokenize_text("a b a");
        assert_eq!(toks, tokenize_text("a b a"));
        let mut ds = Dataset::from_examples(
            vec![Example::new("1", "a b a", vec!["x".into()])],
            Vec::new(),
        )
        .unwrap();
        build_vocab_and_tokenize(&mut ds, 10).unwrap();
        let ids = &ds.examples[0].tokens;
        assert_eq!(ids[0], ids[2]);
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(tokenize_text("Don't stop."), vec!["don", "'", "t", "stop", "."]);
    }

    #[test]
    fn estimate_length_uses_factor_and_cap() {
        let mut ds = synthetic(5);
        for ex in ds.examples.iter_mut() {
            ex.text = "a a a a a a a a a a".into(); // 10 tokens
        }
        build_vocab_and_tokenize(&mut ds, 100).unwrap();
        assert_eq!(estimate_max_length(&ds, 1.0, 1.2, 512).unwrap(), 12);
        assert_eq!(estimate_max_length(&ds, 1.0, 1.2, 8).unwrap(), 8);
    }

    #[test]
    fn estimate_length_direct_evaluation() {
        let examples = vec![
            Example::new("1", "a ".repeat(10).trim().to_string(), vec!["x".into()]),
            Example::new("2", "a ".repeat(20).trim().to_string(), vec!["x".into()]),
            Example::new("3", "a ".repeat(30).trim().to_string(), vec!["x".into()]),
        ];
        let mut ds = Dataset::from_examples(examples, Vec::new()).unwrap();
        build_vocab_and_tokenize(&mut ds, 100).unwrap();
        assert_eq!(estimate_max_length(&ds, 1.0, 1.2, 512).unwrap(), 36);
    }

    #[test]
    fn estimate_length_monotone_in_factor() {
        let mut ds = synthetic(20);
        build_vocab_and_tokenize(&mut ds, 100).unwrap();
        let mut prev = 0;
        for f in [1.0, 1.2, 1.5, 2.0, 4.0] {
            let est = estimate_max_length(&ds, 0.5, f, 512).unwrap();
            assert!(est >= prev);
            assert!(est <= 512);
            prev = est;
        }
    }

    #[test]
    fn stats_match_hand_counts() {
        let examples = vec![
            Example::new("1", "a b c d", vec!["x".into()]),
            Example::new("2", "a b c d e f", vec!["x".into()]),
        ];
        let mut ds = Dataset::from_examples(examples, Vec::new()).unwrap();
        build_vocab_and_tokenize(&mut ds, 100).unwrap();
        let stats = compute_stats(&ds);
        assert_eq!(stats.avg_length, 5.0);
        assert_eq!(stats.max_length, 6);
        assert_eq!(stats.per_class.get("x"), Some(&2));
        assert!(!stats.empty);
    }

    #[test]
    fn empty_split_stats_are_flagged() {
        let ds = Dataset {
            examples: Vec::new(),
            unlabelled: Vec::new(),
            levels: 1,
            class_index: BTreeMap::new(),
            vocab: None,
        };
        let stats = compute_stats(&ds);
        assert!(stats.empty);
        assert_eq!(stats.count, 0);
        assert_eq!(stats.avg_length, 0.0);
    }
}
