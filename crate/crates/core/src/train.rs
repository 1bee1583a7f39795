//! Phase orchestration: the denoising phase, the contrastive phase, the
//! fine-tuning phase, the joint variant, and the full ablation matrix.
//!
//! Every run is a pure function of (dataset bytes, config, seed) when
//! executed single-threaded. All randomness flows from per-purpose derived
//! seeds, and the test split sits behind an access guard that counts any
//! read happening before the final evaluation.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::balance::{build_training_pairs, make_pairs, BalancePlan, LabeledPair, PairSettings};
use crate::config::{ExperimentConfig, TrainingConfig, UseLength};
use crate::corpus::{
    build_vocab_and_tokenize, estimate_max_length, split_dataset, tokenize_with_vocab, Dataset, EOS,
};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::graph::{Graph, StoreTag};
use crate::model::optim::AdamW;
use crate::model::params::ParamStore;
use crate::model::{
    set_trainable, teacher_input, ClassifierHead, DecoderBundle, EncoderBundle, ModelConfig,
};
use crate::noise::{corrupt_tokens, CorruptionConfig, StopwordNoiseConfig};
use crate::util::{derive_seed, fnv1a64_hex};
use crate::{Error, Result};

/// The seven pipeline configurations of the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    ThreePhase,
    Joint,
    DaeFt,
    ClFt,
    FtOnly,
    NoImb,
    ExtraImb,
}

impl Variant {
    /// Column order used in ablation reports.
    pub const TABLE_ORDER: [Variant; 7] = [
        Variant::ThreePhase,
        Variant::Joint,
        Variant::DaeFt,
        Variant::ClFt,
        Variant::ExtraImb,
        Variant::NoImb,
        Variant::FtOnly,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Variant::ThreePhase => "3phase",
            Variant::Joint => "joint",
            Variant::DaeFt => "dae_ft",
            Variant::ClFt => "cl_ft",
            Variant::FtOnly => "ft",
            Variant::NoImb => "no_imb",
            Variant::ExtraImb => "extra_imb",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::TABLE_ORDER
            .into_iter()
            .find(|v| v.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant \"{s}\"")))
    }

    /// Phase names this variant runs, in order.
    pub fn phases(&self) -> Vec<&'static str> {
        match self {
            Variant::ThreePhase | Variant::NoImb | Variant::ExtraImb => vec!["dae", "cl", "ft"],
            Variant::Joint => vec!["joint", "ft"],
            Variant::DaeFt => vec!["dae", "ft"],
            Variant::ClFt => vec!["cl", "ft"],
            Variant::FtOnly => vec!["ft"],
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// Wraps the test split and counts reads that happen before the phase-3
/// evaluation unlocks it.
pub struct TestGuard {
    split: Dataset,
    unlocked: Cell<bool>,
    pre_unlock_reads: Cell<u64>,
}

impl TestGuard {
    pub fn new(split: Dataset) -> Self {
        TestGuard {
            split,
            unlocked: Cell::new(false),
            pre_unlock_reads: Cell::new(0),
        }
    }

    pub fn dataset(&self) -> &Dataset {
        if !self.unlocked.get() {
            self.pre_unlock_reads.set(self.pre_unlock_reads.get() + 1);
        }
        &self.split
    }

    pub fn unlock_for_eval(&self) {
        self.unlocked.set(true);
    }

    pub fn pre_unlock_reads(&self) -> u64 {
        self.pre_unlock_reads.get()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub path: Option<String>,
    /// Content hash of the checkpoint bytes ("unsaved" runs hash the store).
    pub hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: String,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val: f64,
    /// "min_val_loss" for phases 1-2 and the joint phase,
    /// "max_val_accuracy" for fine-tuning.
    pub selection: String,
    /// Index 0 is the untrained baseline.
    pub val_curve: Vec<f64>,
    pub checkpoint: Option<CheckpointRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BalanceSummary {
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub raw_imbalance: f64,
    pub target_imbalance: f64,
    pub targets: BTreeMap<String, usize>,
    pub balanced_size: usize,
    pub pairs: usize,
}

impl BalanceSummary {
    fn from_plan(plan: &BalancePlan, balanced_size: usize, pairs: usize) -> Self {
        BalanceSummary {
            min_ratio: plan.min_ratio,
            max_ratio: plan.max_ratio,
            raw_imbalance: plan.raw_imbalance(),
            target_imbalance: plan.target_imbalance(),
            targets: plan
                .targets
                .iter()
                .map(|(k, v)| (k.join("/"), *v))
                .collect(),
            balanced_size,
            pairs,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub variant: String,
    pub seed: u64,
    /// "complete", "aborted", or "incomplete".
    pub status: String,
    pub note: Option<String>,
    pub vocab_size: usize,
    pub truncation_length: usize,
    pub class_count: usize,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub balance: Option<BalanceSummary>,
    pub phases: Vec<PhaseRecord>,
    pub test_metrics: Option<MetricsReport>,
    pub test_reads_before_eval: u64,
    /// Kept outside the content hash so reruns are byte-comparable.
    pub timestamps: Timestamps,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Hash of the manifest with timestamps zeroed; reports reference
    /// manifests by this value.
    pub fn content_hash(&self) -> String {
        let mut clone = self.clone();
        clone.timestamps = Timestamps::default();
        fnv1a64_hex(clone.to_json().as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn test_accuracy(&self) -> Option<f64> {
        self.test_metrics.as_ref().map(|m| m.accuracy)
    }
}

// ── shared phase machinery ──────────────────────────────────────────────

fn zero_grads_like(store: &ParamStore) -> Vec<Vec<f64>> {
    store.iter().map(|p| vec![0.0; p.len()]).collect()
}

/// Pull this step's gradients out of the graph into per-store buffers.
fn collect_grads(
    g: &Graph,
    enc: Option<&mut Vec<Vec<f64>>>,
    dec: Option<&mut Vec<Vec<f64>>>,
    head: Option<&mut Vec<Vec<f64>>>,
) {
    let mut enc = enc;
    let mut dec = dec;
    let mut head = head;
    g.for_each_param_grad(|tag, pid, grad| {
        let slot = match tag {
            StoreTag::Encoder => enc.as_deref_mut(),
            StoreTag::Decoder => dec.as_deref_mut(),
            StoreTag::Head => head.as_deref_mut(),
        };
        if let Some(buf) = slot {
            for (a, b) in buf[pid].iter_mut().zip(grad) {
                *a += b;
            }
        }
    });
}

fn shuffled_indices(n: usize, repeat: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n * repeat).map(|i| i % n).collect();
    order.shuffle(rng);
    order
}

/// Reconstruction targets are capped one below the position budget so the
/// BOS-shifted decoder input always fits.
fn dae_target(seq: &[u32], truncation: usize, max_positions: usize) -> Vec<u32> {
    let limit = truncation.min(max_positions.saturating_sub(1)).max(1);
    let mut t: Vec<u32> = seq.iter().copied().take(limit).collect();
    t.push(EOS);
    t
}

struct DaeBatch {
    corrupted: Vec<Vec<u32>>,
    teacher: Vec<Vec<u32>>,
    flat_targets: Vec<usize>,
}

fn build_dae_batch(
    seqs: &[&Vec<u32>],
    corruption: &CorruptionConfig,
    truncation: usize,
    max_positions: usize,
    rng: &mut ChaCha8Rng,
) -> DaeBatch {
    let mut corrupted = Vec::with_capacity(seqs.len());
    let mut teacher = Vec::with_capacity(seqs.len());
    let mut flat_targets = Vec::new();
    for seq in seqs {
        corrupted.push(corrupt_tokens(seq, corruption, rng));
        let target = dae_target(seq, truncation, max_positions);
        teacher.push(teacher_input(&target, target.len()));
        flat_targets.extend(target.iter().map(|&t| t as usize));
    }
    DaeBatch { corrupted, teacher, flat_targets }
}

/// One forward pass of encoder + decoder + reconstruction loss.
fn dae_loss_graph(
    bundle: &EncoderBundle,
    decoder: &DecoderBundle,
    batch: &DaeBatch,
    truncation: usize,
) -> Result<(Graph, crate::model::graph::Id, usize)> {
    let mut g = Graph::new();
    let enc = bundle.encode_graph(&mut g, &batch.corrupted, truncation)?;
    let (logits, _) = decoder.decode_graph(&mut g, enc, &batch.teacher)?;
    let positions = batch.flat_targets.len();
    let loss = g.ce_mean(logits, batch.flat_targets.clone());
    Ok((g, loss, positions))
}

/// Position-weighted mean reconstruction loss over freshly noised data.
fn dae_validation_loss(
    bundle: &EncoderBundle,
    decoder: &DecoderBundle,
    seqs: &[Vec<u32>],
    corruption: &CorruptionConfig,
    truncation: usize,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut positions = 0usize;
    for chunk in seqs.chunks(batch_size.max(1)) {
        let refs: Vec<&Vec<u32>> = chunk.iter().collect();
        let batch = build_dae_batch(&refs, corruption, truncation, bundle.cfg.max_positions, &mut rng);
        let (g, loss, n) = dae_loss_graph(bundle, decoder, &batch, truncation)?;
        total += g.scalar(loss) * n as f64;
        positions += n;
    }
    if positions == 0 {
        return Err(Error::Domain("no validation positions".into()));
    }
    Ok(total / positions as f64)
}

/// Denoising phase. Noise is regenerated at every step; validation uses a
/// fixed epoch-indexed seed. Returns the encoder+bottleneck bundle from the
/// best validation epoch; the decoder is dropped.
pub fn train_dae(
    cfg: &TrainingConfig,
    train_seqs: &[Vec<u32>],
    val_seqs: &[Vec<u32>],
    mut bundle: EncoderBundle,
    truncation: usize,
    seed: u64,
) -> Result<(EncoderBundle, PhaseRecord)> {
    if train_seqs.is_empty() {
        return Err(Error::Domain("denoising phase has no training data".into()));
    }
    let corruption = CorruptionConfig::new(cfg.deleting_ratio, cfg.noise_mode)?;
    let mut decoder = DecoderBundle::new(bundle.cfg.clone(), derive_seed(seed, "decoder-init", 0))?;
    let mut opt_enc = AdamW::new(cfg.learning_rate_dae, cfg.eps_dae_cl, cfg.weight_decay);
    let mut opt_dec = AdamW::new(cfg.learning_rate_dae, cfg.eps_dae_cl, cfg.weight_decay);

    let val_loss_at = |bundle: &EncoderBundle, decoder: &DecoderBundle, epoch: usize| -> Result<f64> {
        let data = if val_seqs.is_empty() { train_seqs } else { val_seqs };
        dae_validation_loss(
            bundle,
            decoder,
            data,
            &corruption,
            truncation,
            cfg.batch_size_dae,
            derive_seed(seed, "dae-val", epoch as u64),
        )
    };

    let mut curve = vec![val_loss_at(&bundle, &decoder, 0)?];
    let mut best_epoch = 0usize;
    let mut best_val = curve[0];
    let mut best_snapshot = bundle.store.snapshot();

    for epoch in 1..=cfg.epochs_dae {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "dae-epoch", epoch as u64));
        let order = shuffled_indices(train_seqs.len(), cfg.data_repeat_dae, &mut rng);
        for chunk in order.chunks(cfg.batch_size_dae) {
            let refs: Vec<&Vec<u32>> = chunk.iter().map(|&i| &train_seqs[i]).collect();
            let batch = build_dae_batch(&refs, &corruption, truncation, bundle.cfg.max_positions, &mut rng);
            let (mut g, loss, _) = dae_loss_graph(&bundle, &decoder, &batch, truncation)?;
            let loss_val = g.scalar(loss);
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!(
                    "dae loss became {loss_val} at epoch {epoch}"
                )));
            }
            g.backward(loss);
            let mut enc_grads = zero_grads_like(&bundle.store);
            let mut dec_grads = zero_grads_like(&decoder.store);
            collect_grads(&g, Some(&mut enc_grads), Some(&mut dec_grads), None);
            opt_enc.step(&mut bundle.store, &enc_grads);
            opt_dec.step(&mut decoder.store, &dec_grads);
        }
        let val = val_loss_at(&bundle, &decoder, epoch)?;
        curve.push(val);
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best_snapshot = bundle.store.snapshot();
        }
    }
    bundle.store.restore(&best_snapshot);
    let record = PhaseRecord {
        phase: "dae".into(),
        epochs_run: cfg.epochs_dae,
        best_epoch,
        best_val,
        selection: "min_val_loss".into(),
        val_curve: curve,
        checkpoint: None,
    };
    Ok((bundle, record))
}

fn pair_batch_views(
    pairs: &[LabeledPair],
    idx: &[usize],
    examples: &[crate::corpus::Example],
) -> (Vec<Vec<u32>>, Vec<Vec<u32>>, Vec<f64>) {
    let mut left = Vec::with_capacity(idx.len());
    let mut right = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let p = &pairs[i];
        left.push(examples[p.left].tokens.clone());
        right.push(examples[p.right].tokens.clone());
        labels.push(p.similarity);
    }
    (left, right, labels)
}

fn cl_loss_graph(
    bundle: &EncoderBundle,
    left: &[Vec<u32>],
    right: &[Vec<u32>],
    labels: Vec<f64>,
    truncation: usize,
) -> Result<(Graph, crate::model::graph::Id)> {
    let mut g = Graph::new();
    let u = bundle.encode_graph(&mut g, left, truncation)?;
    let v = bundle.encode_graph(&mut g, right, truncation)?;
    let cos = g.cosine_rows(u, v);
    let loss = g.mse_mean(cos, labels);
    Ok((g, loss))
}

fn cl_validation_loss(
    bundle: &EncoderBundle,
    pairs: &[LabeledPair],
    examples: &[crate::corpus::Example],
    batch_size: usize,
    truncation: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let all: Vec<usize> = (0..pairs.len()).collect();
    for chunk in all.chunks(batch_size.max(1)) {
        let (left, right, labels) = pair_batch_views(pairs, chunk, examples);
        let (g, loss) = cl_loss_graph(bundle, &left, &right, labels, truncation)?;
        total += g.scalar(loss) * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Contrastive phase over a Siamese pair of weight-shared towers. Attaches
/// the projection layer, builds imbalance-corrected pairs from the train
/// split, and selects by validation pair loss (validation pairs are built
/// without imbalance correction).
pub fn train_cl(
    cfg: &TrainingConfig,
    train: &Dataset,
    val: &Dataset,
    mut bundle: EncoderBundle,
    settings: &PairSettings,
    truncation: usize,
    seed: u64,
) -> Result<(EncoderBundle, PhaseRecord, Option<BalanceSummary>)> {
    let vocab = train
        .vocab
        .as_ref()
        .ok_or_else(|| Error::Schema("train split is not tokenized".into()))?;
    bundle.attach_projection(derive_seed(seed, "projection", 0));

    let mut pair_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "train-pairs", 0));
    let (balanced, pairs, plan) = build_training_pairs(
        &train.examples,
        &train.class_index,
        train.levels,
        vocab,
        settings,
        &mut pair_rng,
    )?;
    if pairs.is_empty() {
        return Err(Error::Domain("no contrastive pairs could be built".into()));
    }
    let summary = plan
        .as_ref()
        .map(|p| BalanceSummary::from_plan(p, balanced.len(), pairs.len()));

    let mut val_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "val-pairs", 0));
    let val_pairs = make_pairs(&val.examples, val.levels, None, &mut val_rng)?;

    let mut opt = AdamW::new(cfg.learning_rate_cl, cfg.eps_dae_cl, cfg.weight_decay);
    let val_loss_at = |bundle: &EncoderBundle| -> Result<Option<f64>> {
        if val_pairs.is_empty() {
            return Ok(None);
        }
        cl_validation_loss(bundle, &val_pairs, &val.examples, cfg.batch_size_cl, truncation).map(Some)
    };

    let mut curve = Vec::new();
    if let Some(v) = val_loss_at(&bundle)? {
        curve.push(v);
    }
    let mut best_epoch = 0usize;
    let mut best_val = curve.first().copied().unwrap_or(f64::INFINITY);
    let mut best_snapshot = bundle.store.snapshot();

    for epoch in 1..=cfg.epochs_cl {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "cl-epoch", epoch as u64));
        let order = shuffled_indices(pairs.len(), 1, &mut rng);
        for chunk in order.chunks(cfg.batch_size_cl) {
            let (left, right, labels) = pair_batch_views(&pairs, chunk, &balanced);
            let (mut g, loss) = cl_loss_graph(&bundle, &left, &right, labels, truncation)?;
            let loss_val = g.scalar(loss);
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!(
                    "cl loss became {loss_val} at epoch {epoch}"
                )));
            }
            g.backward(loss);
            let mut enc_grads = zero_grads_like(&bundle.store);
            collect_grads(&g, Some(&mut enc_grads), None, None);
            opt.step(&mut bundle.store, &enc_grads);
        }
        match val_loss_at(&bundle)? {
            Some(val) => {
                curve.push(val);
                if val < best_val {
                    best_val = val;
                    best_epoch = epoch;
                    best_snapshot = bundle.store.snapshot();
                }
            }
            None => {
                // no validation pairs: keep the last epoch
                best_epoch = epoch;
                best_snapshot = bundle.store.snapshot();
            }
        }
    }
    bundle.store.restore(&best_snapshot);
    let record = PhaseRecord {
        phase: "cl".into(),
        epochs_run: cfg.epochs_cl,
        best_epoch,
        best_val: if best_val.is_finite() { best_val } else { f64::NAN },
        selection: "min_val_loss".into(),
        val_curve: curve,
        checkpoint: None,
    };
    Ok((bundle, record, summary))
}

/// The joint variant: each optimization step takes one noised reconstruction
/// batch and one pair batch and sums both losses before the update.
#[allow(clippy::too_many_arguments)]
pub fn train_joint(
    cfg: &TrainingConfig,
    train: &Dataset,
    val: &Dataset,
    dae_train_seqs: &[Vec<u32>],
    dae_val_seqs: &[Vec<u32>],
    mut bundle: EncoderBundle,
    settings: &PairSettings,
    truncation: usize,
    seed: u64,
) -> Result<(EncoderBundle, PhaseRecord, Option<BalanceSummary>)> {
    let vocab = train
        .vocab
        .as_ref()
        .ok_or_else(|| Error::Schema("train split is not tokenized".into()))?;
    bundle.attach_projection(derive_seed(seed, "projection", 0));
    let corruption = CorruptionConfig::new(cfg.deleting_ratio, cfg.noise_mode)?;
    let mut decoder = DecoderBundle::new(bundle.cfg.clone(), derive_seed(seed, "decoder-init", 0))?;

    let mut pair_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "train-pairs", 0));
    let (balanced, pairs, plan) = build_training_pairs(
        &train.examples,
        &train.class_index,
        train.levels,
        vocab,
        settings,
        &mut pair_rng,
    )?;
    if pairs.is_empty() {
        return Err(Error::Domain("no contrastive pairs could be built".into()));
    }
    let summary = plan
        .as_ref()
        .map(|p| BalanceSummary::from_plan(p, balanced.len(), pairs.len()));
    let mut val_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "val-pairs", 0));
    let val_pairs = make_pairs(&val.examples, val.levels, None, &mut val_rng)?;

    let mut opt_enc = AdamW::new(cfg.learning_rate_dae, cfg.eps_dae_cl, cfg.weight_decay);
    let mut opt_dec = AdamW::new(cfg.learning_rate_dae, cfg.eps_dae_cl, cfg.weight_decay);

    let epochs = cfg.epochs_dae.max(cfg.epochs_cl);
    let val_loss_at = |bundle: &EncoderBundle, decoder: &DecoderBundle, epoch: usize| -> Result<f64> {
        let data = if dae_val_seqs.is_empty() { dae_train_seqs } else { dae_val_seqs };
        let dae = dae_validation_loss(
            bundle,
            decoder,
            data,
            &corruption,
            truncation,
            cfg.batch_size_dae,
            derive_seed(seed, "joint-val", epoch as u64),
        )?;
        let cl = if val_pairs.is_empty() {
            0.0
        } else {
            cl_validation_loss(bundle, &val_pairs, &val.examples, cfg.batch_size_cl, truncation)?
        };
        Ok(cfg.joint_weight_dae * dae + cfg.joint_weight_cl * cl)
    };

    let mut curve = vec![val_loss_at(&bundle, &decoder, 0)?];
    let mut best_epoch = 0usize;
    let mut best_val = curve[0];
    let mut best_snapshot = bundle.store.snapshot();

    for epoch in 1..=epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "joint-epoch", epoch as u64));
        let dae_order = shuffled_indices(dae_train_seqs.len(), cfg.data_repeat_dae, &mut rng);
        let pair_order = shuffled_indices(pairs.len(), 1, &mut rng);
        let dae_batches: Vec<&[usize]> = dae_order.chunks(cfg.batch_size_dae).collect();
        let pair_batches: Vec<&[usize]> = pair_order.chunks(cfg.batch_size_cl).collect();
        let steps = dae_batches.len().max(pair_batches.len());
        for step in 0..steps {
            let dae_idx = dae_batches[step % dae_batches.len()];
            let pair_idx = pair_batches[step % pair_batches.len()];

            let refs: Vec<&Vec<u32>> = dae_idx.iter().map(|&i| &dae_train_seqs[i]).collect();
            let batch = build_dae_batch(&refs, &corruption, truncation, bundle.cfg.max_positions, &mut rng);

            let mut g = Graph::new();
            let enc = bundle.encode_graph(&mut g, &batch.corrupted, truncation)?;
            let (logits, _) = decoder.decode_graph(&mut g, enc, &batch.teacher)?;
            let dae_part = g.ce_mean(logits, batch.flat_targets.clone());

            let (left, right, labels) = pair_batch_views(&pairs, pair_idx, &balanced);
            let u = bundle.encode_graph(&mut g, &left, truncation)?;
            let v = bundle.encode_graph(&mut g, &right, truncation)?;
            let cos = g.cosine_rows(u, v);
            let cl_part = g.mse_mean(cos, labels);

            let dae_w = g.scale(dae_part, cfg.joint_weight_dae);
            let cl_w = g.scale(cl_part, cfg.joint_weight_cl);
            let loss = g.add(dae_w, cl_w);
            let loss_val = g.scalar(loss);
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!(
                    "joint loss became {loss_val} at epoch {epoch}"
                )));
            }
            g.backward(loss);
            let mut enc_grads = zero_grads_like(&bundle.store);
            let mut dec_grads = zero_grads_like(&decoder.store);
            collect_grads(&g, Some(&mut enc_grads), Some(&mut dec_grads), None);
            opt_enc.step(&mut bundle.store, &enc_grads);
            opt_dec.step(&mut decoder.store, &dec_grads);
        }
        let val = val_loss_at(&bundle, &decoder, epoch)?;
        curve.push(val);
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best_snapshot = bundle.store.snapshot();
        }
    }
    bundle.store.restore(&best_snapshot);
    let record = PhaseRecord {
        phase: "joint".into(),
        epochs_run: epochs,
        best_epoch,
        best_val,
        selection: "min_val_loss".into(),
        val_curve: curve,
        checkpoint: None,
    };
    Ok((bundle, record, summary))
}

/// Map examples to class ids under a fixed label universe.
fn class_targets(ds: &Dataset, class_map: &BTreeMap<Vec<String>, usize>) -> Result<Vec<usize>> {
    ds.examples
        .iter()
        .map(|e| {
            class_map.get(&e.label_path).copied().ok_or_else(|| {
                Error::Schema(format!(
                    "label path {:?} missing from the label universe",
                    e.label_path
                ))
            })
        })
        .collect()
}

/// Argmax predictions for a tokenized split.
pub fn predict_dataset(
    bundle: &EncoderBundle,
    head: &ClassifierHead,
    ds: &Dataset,
    truncation: usize,
) -> Result<Vec<usize>> {
    let seqs: Vec<Vec<u32>> = ds.examples.iter().map(|e| e.tokens.clone()).collect();
    let vecs = bundle.encode(&seqs, truncation)?;
    let mut preds = Vec::with_capacity(vecs.len());
    for v in &vecs {
        let logits = head.logits(v)?;
        let pred = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
            .map(|(i, _)| i)
            .unwrap_or(0);
        preds.push(pred);
    }
    Ok(preds)
}

fn split_accuracy(
    bundle: &EncoderBundle,
    head: &ClassifierHead,
    ds: &Dataset,
    targets: &[usize],
    truncation: usize,
) -> Result<f64> {
    let preds = predict_dataset(bundle, head, ds, truncation)?;
    let correct = preds
        .iter()
        .zip(targets)
        .filter(|(p, t)| p == t)
        .count();
    Ok(correct as f64 / targets.len().max(1) as f64)
}

/// Fine-tuning phase: cross-entropy on a two-layer softmax head with
/// patience-based early stopping on validation accuracy.
pub fn train_ft(
    cfg: &TrainingConfig,
    train: &Dataset,
    val: &Dataset,
    class_paths: &[Vec<String>],
    mut bundle: EncoderBundle,
    truncation: usize,
    seed: u64,
) -> Result<(EncoderBundle, ClassifierHead, PhaseRecord)> {
    if cfg.patience_ft >= cfg.max_epochs_ft {
        return Err(Error::Config(format!(
            "patience_ft {} must be below max_epochs_ft {}",
            cfg.patience_ft, cfg.max_epochs_ft
        )));
    }
    let class_map: BTreeMap<Vec<String>, usize> = class_paths
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), i))
        .collect();
    let k = class_map.len();
    let head = ClassifierHead::new(bundle.cfg.hidden_dim, k, derive_seed(seed, "head", 0))?;
    let mut head = head;
    set_trainable(&mut bundle, cfg.freeze_encoder);

    let train_targets = class_targets(train, &class_map)?;
    let val_targets = class_targets(val, &class_map)?;
    let train_seqs: Vec<Vec<u32>> = train.examples.iter().map(|e| e.tokens.clone()).collect();

    let mut opt_enc = AdamW::new(cfg.learning_rate_ft, cfg.eps_ft, cfg.weight_decay);
    let mut opt_head = AdamW::new(cfg.learning_rate_ft, cfg.eps_ft, cfg.weight_decay);

    let val_acc_at = |bundle: &EncoderBundle, head: &ClassifierHead| -> Result<f64> {
        if val.examples.is_empty() {
            // no validation data: score on train
            return split_accuracy(bundle, head, train, &train_targets, truncation);
        }
        split_accuracy(bundle, head, val, &val_targets, truncation)
    };

    let mut curve = vec![val_acc_at(&bundle, &head)?];
    let mut best_epoch = 0usize;
    let mut best_acc = curve[0];
    let mut best_enc = bundle.store.snapshot();
    let mut best_head = head.store.snapshot();
    let mut epochs_run = 0usize;

    for epoch in 1..=cfg.max_epochs_ft {
        epochs_run = epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "ft-epoch", epoch as u64));
        let order = shuffled_indices(train_seqs.len(), 1, &mut rng);
        for chunk in order.chunks(cfg.batch_size_ft) {
            let seqs: Vec<Vec<u32>> = chunk.iter().map(|&i| train_seqs[i].clone()).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| train_targets[i]).collect();
            let mut g = Graph::new();
            let enc = bundle.encode_graph(&mut g, &seqs, truncation)?;
            let logits = head.logits_graph(&mut g, enc);
            let loss = g.ce_mean(logits, targets);
            let loss_val = g.scalar(loss);
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!(
                    "ft loss became {loss_val} at epoch {epoch}"
                )));
            }
            g.backward(loss);
            let mut enc_grads = zero_grads_like(&bundle.store);
            let mut head_grads = zero_grads_like(&head.store);
            collect_grads(&g, Some(&mut enc_grads), None, Some(&mut head_grads));
            opt_enc.step(&mut bundle.store, &enc_grads);
            opt_head.step(&mut head.store, &head_grads);
        }
        let acc = val_acc_at(&bundle, &head)?;
        curve.push(acc);
        if acc > best_acc {
            best_acc = acc;
            best_epoch = epoch;
            best_enc = bundle.store.snapshot();
            best_head = head.store.snapshot();
        }
        if epoch - best_epoch >= cfg.patience_ft {
            break;
        }
    }
    bundle.store.restore(&best_enc);
    head.store.restore(&best_head);
    let record = PhaseRecord {
        phase: "ft".into(),
        epochs_run,
        best_epoch,
        best_val: best_acc,
        selection: "max_val_accuracy".into(),
        val_curve: curve,
        checkpoint: None,
    };
    Ok((bundle, head, record))
}

// ── run orchestration ───────────────────────────────────────────────────

fn stopword_noiser(cfg: &ExperimentConfig) -> Result<StopwordNoiseConfig> {
    match &cfg.data.stopword_file {
        Some(path) => StopwordNoiseConfig::from_file(
            path,
            cfg.training.stopword_min_length,
            cfg.training.stopword_delete_frac,
        ),
        None => {
            let mut noiser = StopwordNoiseConfig::bundled();
            noiser.min_length = cfg.training.stopword_min_length;
            noiser.delete_frac = cfg.training.stopword_delete_frac;
            if noiser.min_length < 1 {
                return Err(Error::Config("stopword_min_length must be >= 1".into()));
            }
            Ok(noiser)
        }
    }
}

fn pair_settings_for(variant: Variant, cfg: &ExperimentConfig) -> Result<PairSettings> {
    let noiser = stopword_noiser(cfg)?;
    let t = &cfg.training;
    Ok(match variant {
        Variant::NoImb => PairSettings {
            correction: false,
            min_ratio: t.min_ratio,
            max_ratio: t.max_ratio,
            noiser,
            max_pairs: t.max_pairs_option(),
        },
        Variant::ExtraImb => PairSettings {
            correction: true,
            min_ratio: 1.5,
            max_ratio: 20.0,
            noiser,
            max_pairs: t.max_pairs_option(),
        },
        _ => PairSettings {
            correction: true,
            min_ratio: t.min_ratio,
            max_ratio: t.max_ratio,
            noiser,
            max_pairs: t.max_pairs_option(),
        },
    })
}

fn checkpoint_ref(
    out_dir: Option<&Path>,
    name: &str,
    save: impl FnOnce(&Path) -> Result<String>,
) -> Result<Option<CheckpointRef>> {
    match out_dir {
        Some(dir) => {
            let path = dir.join(name);
            let hash = save(&path)?;
            Ok(Some(CheckpointRef {
                path: Some(path.to_string_lossy().into_owned()),
                hash,
            }))
        }
        None => Ok(None),
    }
}

/// Execute one variant end to end and produce its manifest. Checkpoints and
/// the manifest are written under `out_dir` when given.
pub fn run_variant(
    variant: Variant,
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<RunManifest> {
    cfg.validate()?;
    let started = now_ms();

    let (mut train, mut val, test) =
        split_dataset(dataset, cfg.data.val_frac, cfg.data.test_frac, derive_seed(seed, "split", 0))?;
    build_vocab_and_tokenize(&mut train, cfg.data.max_vocab)?;
    let vocab = train.vocab.clone().expect("vocab just built");
    tokenize_with_vocab(&mut val, &vocab);
    let mut test = test;
    tokenize_with_vocab(&mut test, &vocab);

    let model_cfg = cfg.model.to_model_config(vocab.len());
    model_cfg.validate()?;
    let truncation = match &cfg.training.use_length {
        UseLength::Fixed(n) => (*n).min(model_cfg.max_positions).max(1),
        UseLength::Auto(_) => estimate_max_length(
            &train,
            cfg.training.length_sample_frac,
            cfg.training.length_factor,
            model_cfg.max_positions,
        )?,
    };

    // Label universe comes from the full dataset schema, not any split.
    let class_paths = dataset.class_paths();
    let guard = TestGuard::new(test);

    let dae_train_seqs: Vec<Vec<u32>> = train
        .examples
        .iter()
        .chain(train.unlabelled.iter())
        .map(|e| e.tokens.clone())
        .collect();
    let dae_val_seqs: Vec<Vec<u32>> = val.examples.iter().map(|e| e.tokens.clone()).collect();

    let mut manifest = RunManifest {
        variant: variant.id().into(),
        seed,
        status: "incomplete".into(),
        note: None,
        vocab_size: vocab.len(),
        truncation_length: truncation,
        class_count: class_paths.len(),
        model: model_cfg.clone(),
        training: cfg.training.clone(),
        balance: None,
        phases: Vec::new(),
        test_metrics: None,
        test_reads_before_eval: 0,
        timestamps: Timestamps { started_unix_ms: started, finished_unix_ms: 0 },
    };

    let mut bundle = EncoderBundle::new(model_cfg, derive_seed(seed, "init", 0))?;
    let settings = pair_settings_for(variant, cfg)?;

    // phases 1-2 per variant; a divergence aborts with a manifest note
    let outcome = (|| -> Result<()> {
        for phase in variant.phases() {
            match phase {
                "dae" => {
                    let (b, mut record) =
                        train_dae(&cfg.training, &dae_train_seqs, &dae_val_seqs, bundle.clone(), truncation, seed)?;
                    bundle = b;
                    record.checkpoint =
                        checkpoint_ref(out_dir, "phase_dae.ckpt", |p| bundle.save(p))?;
                    manifest.phases.push(record);
                }
                "cl" => {
                    let (b, mut record, summary) = train_cl(
                        &cfg.training,
                        &train,
                        &val,
                        bundle.clone(),
                        &settings,
                        truncation,
                        seed,
                    )?;
                    bundle = b;
                    record.checkpoint =
                        checkpoint_ref(out_dir, "phase_cl.ckpt", |p| bundle.save(p))?;
                    manifest.balance = summary;
                    manifest.phases.push(record);
                }
                "joint" => {
                    let (b, mut record, summary) = train_joint(
                        &cfg.training,
                        &train,
                        &val,
                        &dae_train_seqs,
                        &dae_val_seqs,
                        bundle.clone(),
                        &settings,
                        truncation,
                        seed,
                    )?;
                    bundle = b;
                    record.checkpoint =
                        checkpoint_ref(out_dir, "phase_joint.ckpt", |p| bundle.save(p))?;
                    manifest.balance = summary;
                    manifest.phases.push(record);
                }
                "ft" => {
                    let (b, head, mut record) = train_ft(
                        &cfg.training,
                        &train,
                        &val,
                        &class_paths,
                        bundle.clone(),
                        truncation,
                        seed,
                    )?;
                    bundle = b;
                    record.checkpoint =
                        checkpoint_ref(out_dir, "phase_ft.ckpt", |p| head.save(p, &bundle))?;
                    manifest.phases.push(record);

                    // phase-3 evaluation: the only place the test split opens
                    guard.unlock_for_eval();
                    let test_ds = guard.dataset();
                    let class_map: BTreeMap<Vec<String>, usize> = class_paths
                        .iter()
                        .enumerate()
                        .map(|(i, p)| (p.clone(), i))
                        .collect();
                    let targets = class_targets(test_ds, &class_map)?;
                    let preds = predict_dataset(&bundle, &head, test_ds, truncation)?;
                    manifest.test_metrics = Some(evaluate(&preds, &targets, class_paths.len())?);
                }
                other => return Err(Error::Config(format!("unknown phase {other}"))),
            }
        }
        Ok(())
    })();

    manifest.test_reads_before_eval = guard.pre_unlock_reads();
    manifest.timestamps.finished_unix_ms = now_ms();
    match outcome {
        Ok(()) => manifest.status = "complete".into(),
        Err(Error::Diverged(msg)) => {
            manifest.status = "aborted".into();
            manifest.note = Some(msg);
        }
        Err(e) => return Err(e),
    }

    if let Some(dir) = out_dir {
        manifest.save(dir.join("manifest.json"))?;
    }
    Ok(manifest)
}
