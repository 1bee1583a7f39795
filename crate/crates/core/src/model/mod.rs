//! The trainable stack: a small transformer encoder with mean pooling and a
//! bottleneck layer (plus an optional projection layer added for the
//! contrastive phase), a mirrored decoder conditioned on the bottleneck
//! vector for the denoising phase, and a two-layer softmax classifier head.

pub mod graph;
pub mod optim;
pub mod params;

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PAD;
use crate::util::{derive_seed, fnv1a64_hex};
use crate::{Error, Result};
use graph::{Graph, Id, Span, StoreTag};
use params::{normal_init, ParamStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub max_positions: usize,
    /// FFN inner width as a multiple of `hidden_dim`.
    pub ffn_mult: usize,
    /// Blocks in the mirrored decoder.
    pub decoder_blocks: usize,
    /// Nonlinearity used in the blocks and classifier head.
    pub activation: String,
    pub pooling: String,
}

impl ModelConfig {
    /// Desk-scale default: CPU-trainable in minutes while exercising every
    /// mechanism of the pipeline.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            hidden_dim: 64,
            n_blocks: 2,
            n_heads: 4,
            max_positions: 64,
            ffn_mult: 2,
            decoder_blocks: 2,
            activation: "gelu".into(),
            pooling: "mean".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} must be a positive multiple of n_heads {}",
                self.hidden_dim, self.n_heads
            )));
        }
        if self.vocab_size < 6 {
            return Err(Error::Config("vocab too small".into()));
        }
        if self.max_positions == 0 || self.n_blocks == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        fnv1a64_hex(serde_json::to_string(self).expect("serializable").as_bytes())
    }
}

const INIT_STD: f64 = 0.02;

fn add_linear(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, group: &str, rows: usize, cols: usize) {
    store.add(&format!("{name}.w"), group, rows, cols, normal_init(rng, rows * cols, INIT_STD));
    store.add(&format!("{name}.b"), group, 1, cols, vec![0.0; cols]);
}

fn add_layer_norm(store: &mut ParamStore, name: &str, group: &str, dim: usize) {
    store.add(&format!("{name}.g"), group, 1, dim, vec![1.0; dim]);
    store.add(&format!("{name}.b"), group, 1, dim, vec![0.0; dim]);
}

/// Truncate, drop pads, and concatenate a batch into span layout.
fn prep_spans(seqs: &[Vec<u32>], truncation: usize, max_positions: usize) -> Result<(Vec<usize>, Vec<usize>, Vec<Span>)> {
    if truncation == 0 {
        return Err(Error::Config("truncation_length must be >= 1".into()));
    }
    let limit = truncation.min(max_positions);
    let mut ids = Vec::new();
    let mut pos = Vec::new();
    let mut spans = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let start = ids.len();
        for &t in seq.iter().filter(|&&t| t != PAD).take(limit) {
            pos.push(ids.len() - start);
            ids.push(t as usize);
        }
        let len = ids.len() - start;
        if len == 0 {
            return Err(Error::Model(
                "sequence contains no usable (non-pad) tokens".into(),
            ));
        }
        spans.push((start, len));
    }
    Ok((ids, pos, spans))
}

/// Encoder + bottleneck (+ optional contrastive projection). The output
/// vector length equals `hidden_dim`; with the projection attached the
/// output is `projection(bottleneck(pool(blocks(x))))`.
#[derive(Debug, Clone)]
pub struct EncoderBundle {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub has_projection: bool,
    pub frozen: bool,
}

impl EncoderBundle {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "encoder-init", 0));
        let mut store = ParamStore::new();
        let h = cfg.hidden_dim;
        store.add("tok_emb", "embedding", cfg.vocab_size, h, normal_init(&mut rng, cfg.vocab_size * h, INIT_STD));
        store.add("pos_emb", "embedding", cfg.max_positions, h, normal_init(&mut rng, cfg.max_positions * h, INIT_STD));
        for i in 0..cfg.n_blocks {
            let grp = format!("block{i}");
            add_layer_norm(&mut store, &format!("blk{i}.ln1"), &grp, h);
            add_linear(&mut store, &mut rng, &format!("blk{i}.attn.q"), &grp, h, h);
            add_linear(&mut store, &mut rng, &format!("blk{i}.attn.k"), &grp, h, h);
            add_linear(&mut store, &mut rng, &format!("blk{i}.attn.v"), &grp, h, h);
            add_linear(&mut store, &mut rng, &format!("blk{i}.attn.o"), &grp, h, h);
            add_layer_norm(&mut store, &format!("blk{i}.ln2"), &grp, h);
            add_linear(&mut store, &mut rng, &format!("blk{i}.ffn.1"), &grp, h, h * cfg.ffn_mult);
            add_linear(&mut store, &mut rng, &format!("blk{i}.ffn.2"), &grp, h * cfg.ffn_mult, h);
        }
        add_layer_norm(&mut store, "final_ln", "final_norm", h);
        add_linear(&mut store, &mut rng, "bottleneck", "bottleneck", h, h);
        Ok(EncoderBundle { cfg, store, has_projection: false, frozen: false })
    }

    /// Add the contrastive projection layer; no-op when already present.
    pub fn attach_projection(&mut self, seed: u64) {
        if self.has_projection {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "projection-init", 0));
        let h = self.cfg.hidden_dim;
        add_linear(&mut self.store, &mut rng, "projection", "projection", h, h);
        self.has_projection = true;
    }

    fn linear(&self, g: &mut Graph, tag: StoreTag, x: Id, name: &str) -> Id {
        let w = g.param(tag, &self.store, self.store.find(&format!("{name}.w")).expect(name));
        let b = g.param(tag, &self.store, self.store.find(&format!("{name}.b")).expect(name));
        let y = g.matmul(x, w);
        g.add_bias(y, b)
    }

    fn norm(&self, g: &mut Graph, tag: StoreTag, x: Id, name: &str) -> Id {
        let gamma = g.param(tag, &self.store, self.store.find(&format!("{name}.g")).expect(name));
        let beta = g.param(tag, &self.store, self.store.find(&format!("{name}.b")).expect(name));
        g.layer_norm(x, gamma, beta)
    }

    /// Forward pass in an existing graph; returns the [B, hidden] output.
    pub fn encode_graph(&self, g: &mut Graph, seqs: &[Vec<u32>], truncation: usize) -> Result<Id> {
        let tag = StoreTag::Encoder;
        let (ids, pos, spans) = prep_spans(seqs, truncation, self.cfg.max_positions)?;
        let tok = g.param(tag, &self.store, self.store.find("tok_emb").expect("tok_emb"));
        let pe = g.param(tag, &self.store, self.store.find("pos_emb").expect("pos_emb"));
        let te = g.embed(tok, &ids);
        let pe = g.embed(pe, &pos);
        let mut x = g.add(te, pe);
        for i in 0..self.cfg.n_blocks {
            let normed = self.norm(g, tag, x, &format!("blk{i}.ln1"));
            let q = self.linear(g, tag, normed, &format!("blk{i}.attn.q"));
            let k = self.linear(g, tag, normed, &format!("blk{i}.attn.k"));
            let v = self.linear(g, tag, normed, &format!("blk{i}.attn.v"));
            let att = g.attention(q, k, v, &spans, self.cfg.n_heads, false);
            let att = self.linear(g, tag, att, &format!("blk{i}.attn.o"));
            x = g.add(x, att);
            let normed = self.norm(g, tag, x, &format!("blk{i}.ln2"));
            let f = self.linear(g, tag, normed, &format!("blk{i}.ffn.1"));
            let f = g.gelu(f);
            let f = self.linear(g, tag, f, &format!("blk{i}.ffn.2"));
            x = g.add(x, f);
        }
        x = self.norm(g, tag, x, "final_ln");
        let pooled = g.mean_pool_spans(x, &spans);
        let mut out = self.linear(g, tag, pooled, "bottleneck");
        if self.has_projection {
            out = self.linear(g, tag, out, "projection");
        }
        Ok(out)
    }

    /// Evaluation-mode encoding: one vector per sequence. Deterministic;
    /// processed in bounded chunks to cap graph memory.
    pub fn encode(&self, seqs: &[Vec<u32>], truncation: usize) -> Result<Vec<Vec<f64>>> {
        let h = self.cfg.hidden_dim;
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(64) {
            let mut g = Graph::new();
            let id = self.encode_graph(&mut g, chunk, truncation)?;
            for row in g.value(id).chunks(h) {
                out.push(row.to_vec());
            }
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.store.total_values()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let cfg_json = serde_json::to_string(&self.cfg)?;
        write_checkpoint(
            path,
            KIND_ENCODER,
            &cfg_json,
            &[("encoder", &self.store)],
            &[u8::from(self.has_projection), u8::from(self.frozen)],
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (cfg_json, mut stores, flags) = read_checkpoint(path, KIND_ENCODER)?;
        let cfg: ModelConfig = serde_json::from_str(&cfg_json)?;
        let (name, store) = stores.pop().ok_or_else(|| Error::Model("checkpoint has no parameter store".into()))?;
        if name != "encoder" {
            return Err(Error::Model(format!("unexpected store {name} in encoder checkpoint")));
        }
        Ok(EncoderBundle {
            cfg,
            store,
            has_projection: flags.first().copied().unwrap_or(0) == 1,
            frozen: flags.get(1).copied().unwrap_or(0) == 1,
        })
    }

    /// Refuse to proceed with a checkpoint built for a different config.
    pub fn ensure_config(&self, expected: &ModelConfig) -> Result<()> {
        if &self.cfg != expected {
            return Err(Error::Model(format!(
                "checkpoint config hash {} does not match expected {}",
                self.cfg.hash(),
                expected.hash()
            )));
        }
        Ok(())
    }
}

/// Mark all encoder parameters (not the projection, not any head) as frozen
/// or trainable. Reversible.
pub fn set_trainable(bundle: &mut EncoderBundle, frozen: bool) {
    bundle
        .store
        .set_trainable_where(|group| group != "projection", !frozen);
    bundle.frozen = frozen;
}

/// Anything that can turn token sequences into fixed-size vectors. External
/// encoders can plug into the fine-tuning phase through this.
pub trait TextEncoder {
    fn hidden_dim(&self) -> usize;
    fn encode_batch(&self, seqs: &[Vec<u32>], truncation_length: usize) -> Result<Vec<Vec<f64>>>;
}

impl TextEncoder for EncoderBundle {
    fn hidden_dim(&self) -> usize {
        self.cfg.hidden_dim
    }

    fn encode_batch(&self, seqs: &[Vec<u32>], truncation_length: usize) -> Result<Vec<Vec<f64>>> {
        self.encode(seqs, truncation_length)
    }
}

/// Mirrored transformer decoder: causal self-attention blocks, each
/// conditioned on the bottleneck vector through a learned projection added
/// to every position, with a vocabulary projection on top.
#[derive(Debug, Clone)]
pub struct DecoderBundle {
    pub cfg: ModelConfig,
    pub store: ParamStore,
}

impl DecoderBundle {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "decoder-init", 0));
        let mut store = ParamStore::new();
        let h = cfg.hidden_dim;
        let grp = "decoder";
        store.add("dec.tok_emb", grp, cfg.vocab_size, h, normal_init(&mut rng, cfg.vocab_size * h, INIT_STD));
        store.add("dec.pos_emb", grp, cfg.max_positions, h, normal_init(&mut rng, cfg.max_positions * h, INIT_STD));
        for i in 0..cfg.decoder_blocks {
            add_layer_norm(&mut store, &format!("dec{i}.ln1"), grp, h);
            add_linear(&mut store, &mut rng, &format!("dec{i}.attn.q"), grp, h, h);
            add_linear(&mut store, &mut rng, &format!("dec{i}.attn.k"), grp, h, h);
            add_linear(&mut store, &mut rng, &format!("dec{i}.attn.v"), grp, h, h);
            add_linear(&mut store, &mut rng, &format!("dec{i}.attn.o"), grp, h, h);
            add_linear(&mut store, &mut rng, &format!("dec{i}.cond"), grp, h, h);
            add_layer_norm(&mut store, &format!("dec{i}.ln2"), grp, h);
            add_linear(&mut store, &mut rng, &format!("dec{i}.ffn.1"), grp, h, h * cfg.ffn_mult);
            add_linear(&mut store, &mut rng, &format!("dec{i}.ffn.2"), grp, h * cfg.ffn_mult, h);
        }
        add_layer_norm(&mut store, "dec.final_ln", grp, h);
        add_linear(&mut store, &mut rng, "dec.out", grp, h, cfg.vocab_size);
        Ok(DecoderBundle { cfg, store })
    }

    fn linear(&self, g: &mut Graph, x: Id, name: &str) -> Id {
        let w = g.param(StoreTag::Decoder, &self.store, self.store.find(&format!("{name}.w")).expect(name));
        let b = g.param(StoreTag::Decoder, &self.store, self.store.find(&format!("{name}.b")).expect(name));
        let y = g.matmul(x, w);
        g.add_bias(y, b)
    }

    fn norm(&self, g: &mut Graph, x: Id, name: &str) -> Id {
        let gamma = g.param(StoreTag::Decoder, &self.store, self.store.find(&format!("{name}.g")).expect(name));
        let beta = g.param(StoreTag::Decoder, &self.store, self.store.find(&format!("{name}.b")).expect(name));
        g.layer_norm(x, gamma, beta)
    }

    /// Teacher-forced logits over concatenated positions. `cond` is the
    /// [B, hidden] bottleneck batch; `inputs` are the shifted target ids.
    pub fn decode_graph(&self, g: &mut Graph, cond: Id, inputs: &[Vec<u32>]) -> Result<(Id, Vec<Span>)> {
        if g.cols(cond) != self.cfg.hidden_dim {
            return Err(Error::Model(format!(
                "bottleneck width {} does not match decoder hidden {}",
                g.cols(cond),
                self.cfg.hidden_dim
            )));
        }
        if g.rows(cond) != inputs.len() {
            return Err(Error::Model("one conditioning vector per sequence required".into()));
        }
        let (ids, pos, spans) = prep_spans(inputs, self.cfg.max_positions, self.cfg.max_positions)?;
        let tok = g.param(StoreTag::Decoder, &self.store, self.store.find("dec.tok_emb").expect("emb"));
        let pe = g.param(StoreTag::Decoder, &self.store, self.store.find("dec.pos_emb").expect("emb"));
        let te = g.embed(tok, &ids);
        let pe = g.embed(pe, &pos);
        let mut x = g.add(te, pe);
        for i in 0..self.cfg.decoder_blocks {
            let normed = self.norm(g, x, &format!("dec{i}.ln1"));
            let q = self.linear(g, normed, &format!("dec{i}.attn.q"));
            let k = self.linear(g, normed, &format!("dec{i}.attn.k"));
            let v = self.linear(g, normed, &format!("dec{i}.attn.v"));
            let att = g.attention(q, k, v, &spans, self.cfg.n_heads, true);
            let att = self.linear(g, att, &format!("dec{i}.attn.o"));
            x = g.add(x, att);
            // conditioning on the bottleneck vector, one residual per block
            let c = self.linear(g, cond, &format!("dec{i}.cond"));
            let c = g.broadcast_spans(c, &spans);
            x = g.add(x, c);
            let normed = self.norm(g, x, &format!("dec{i}.ln2"));
            let f = self.linear(g, normed, &format!("dec{i}.ffn.1"));
            let f = g.gelu(f);
            let f = self.linear(g, f, &format!("dec{i}.ffn.2"));
            x = g.add(x, f);
        }
        x = self.norm(g, x, "dec.final_ln");
        let logits = self.linear(g, x, "dec.out");
        Ok((logits, spans))
    }

    /// Per-position vocabulary logits for a target prefix, conditioned only
    /// on the bottleneck vector and prior target tokens.
    pub fn decode_logits(&self, bottleneck: &[f64], prefix: &[u32]) -> Result<Vec<Vec<f64>>> {
        if bottleneck.len() != self.cfg.hidden_dim {
            return Err(Error::Model(format!(
                "bottleneck length {} does not match decoder hidden {}",
                bottleneck.len(),
                self.cfg.hidden_dim
            )));
        }
        if prefix.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let cond = g.leaf(bottleneck.to_vec(), 1, self.cfg.hidden_dim);
        let inputs = vec![teacher_input(prefix, prefix.len())];
        let (logits, _) = self.decode_graph(&mut g, cond, &inputs)?;
        Ok(g
            .value(logits)
            .chunks(self.cfg.vocab_size)
            .map(|c| c.to_vec())
            .collect())
    }
}

/// Shift a target sequence right behind BOS: position i of the decoder input
/// is the token the model saw before predicting target position i.
pub fn teacher_input(target: &[u32], limit: usize) -> Vec<u32> {
    let n = target.len().min(limit);
    let mut input = Vec::with_capacity(n);
    input.push(crate::corpus::BOS);
    input.extend_from_slice(&target[..n.saturating_sub(1)]);
    input
}

/// Two dense layers H -> H -> K with a nonlinearity between and softmax out.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub hidden: usize,
    pub k: usize,
    pub store: ParamStore,
}

impl ClassifierHead {
    pub fn new(hidden: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config("classifier needs at least 2 classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "head-init", 0));
        let mut store = ParamStore::new();
        add_linear(&mut store, &mut rng, "head.1", "head", hidden, hidden);
        add_linear(&mut store, &mut rng, "head.2", "head", hidden, k);
        Ok(ClassifierHead { hidden, k, store })
    }

    pub fn logits_graph(&self, g: &mut Graph, x: Id) -> Id {
        let tag = StoreTag::Head;
        let w1 = g.param(tag, &self.store, self.store.find("head.1.w").expect("head"));
        let b1 = g.param(tag, &self.store, self.store.find("head.1.b").expect("head"));
        let w2 = g.param(tag, &self.store, self.store.find("head.2.w").expect("head"));
        let b2 = g.param(tag, &self.store, self.store.find("head.2.b").expect("head"));
        let h = g.matmul(x, w1);
        let h = g.add_bias(h, b1);
        let h = g.gelu(h);
        let y = g.matmul(h, w2);
        g.add_bias(y, b2)
    }

    pub fn logits(&self, vec: &[f64]) -> Result<Vec<f64>> {
        if vec.len() != self.hidden {
            return Err(Error::Model(format!(
                "input length {} does not match head width {}",
                vec.len(),
                self.hidden
            )));
        }
        let mut g = Graph::new();
        let x = g.leaf(vec.to_vec(), 1, self.hidden);
        let id = self.logits_graph(&mut g, x);
        Ok(g.value(id).to_vec())
    }

    /// Softmax probabilities over the K classes.
    pub fn classify(&self, vec: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(vec)?))
    }

    pub fn save(&self, path: impl AsRef<Path>, encoder: &EncoderBundle) -> Result<String> {
        let cfg_json = serde_json::to_string(&serde_json::json!({
            "model": encoder.cfg,
            "k": self.k,
        }))?;
        write_checkpoint(
            path,
            KIND_CLASSIFIER,
            &cfg_json,
            &[("encoder", &encoder.store), ("head", &self.store)],
            &[u8::from(encoder.has_projection), u8::from(encoder.frozen)],
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(EncoderBundle, ClassifierHead)> {
        let (cfg_json, stores, flags) = read_checkpoint(path, KIND_CLASSIFIER)?;
        let meta: serde_json::Value = serde_json::from_str(&cfg_json)?;
        let cfg: ModelConfig = serde_json::from_value(meta["model"].clone())?;
        let k = meta["k"]
            .as_u64()
            .ok_or_else(|| Error::Model("classifier checkpoint missing class count".into()))? as usize;
        let mut encoder_store = None;
        let mut head_store = None;
        for (name, store) in stores {
            match name.as_str() {
                "encoder" => encoder_store = Some(store),
                "head" => head_store = Some(store),
                other => return Err(Error::Model(format!("unexpected store {other}"))),
            }
        }
        let store = encoder_store.ok_or_else(|| Error::Model("missing encoder store".into()))?;
        let head = head_store.ok_or_else(|| Error::Model("missing head store".into()))?;
        let hidden = cfg.hidden_dim;
        Ok((
            EncoderBundle {
                cfg,
                store,
                has_projection: flags.first().copied().unwrap_or(0) == 1,
                frozen: flags.get(1).copied().unwrap_or(0) == 1,
            },
            ClassifierHead { hidden, k, store: head },
        ))
    }
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

// ── checkpoint file format ──────────────────────────────────────────────
// magic "TPCK", version u32, kind u8, flags, config JSON (with fnv64 of the
// JSON embedded to refuse corrupt or mismatched loads), then each parameter
// store with full f64 bit patterns. Little-endian throughout.

const CKPT_MAGIC: &[u8; 4] = b"TPCK";
const CKPT_VERSION: u32 = 1;
const KIND_ENCODER: u8 = 1;
const KIND_CLASSIFIER: u8 = 2;

fn write_checkpoint(
    path: impl AsRef<Path>,
    kind: u8,
    config_json: &str,
    stores: &[(&str, &ParamStore)],
    flags: &[u8],
) -> Result<String> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.push(kind);
    buf.push(flags.len() as u8);
    buf.extend_from_slice(flags);
    let cfg = config_json.as_bytes();
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg);
    buf.extend_from_slice(&crate::util::fnv1a64(cfg).to_le_bytes());
    buf.extend_from_slice(&(stores.len() as u32).to_le_bytes());
    for (name, store) in stores {
        write_str(&mut buf, name);
        buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
        for p in store.iter() {
            write_str(&mut buf, &p.name);
            write_str(&mut buf, &p.group);
            buf.extend_from_slice(&(p.rows as u32).to_le_bytes());
            buf.extend_from_slice(&(p.cols as u32).to_le_bytes());
            buf.push(u8::from(p.trainable));
            for v in &p.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let hash = fnv1a64_hex(&buf);
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(hash)
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u16).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Model("truncated checkpoint".into()));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        Ok(String::from_utf8_lossy(self.take(n)?).into_owned())
    }
}

/// (config JSON, named parameter stores, flag bytes)
type CheckpointContents = (String, Vec<(String, ParamStore)>, Vec<u8>);

fn read_checkpoint(path: impl AsRef<Path>, expected_kind: u8) -> Result<CheckpointContents> {
    let bytes = fs::read(path)?;
    let mut r = Reader { buf: &bytes, at: 0 };
    if r.take(4)? != CKPT_MAGIC {
        return Err(Error::Model("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(Error::Model(format!("unsupported checkpoint version {version}")));
    }
    let kind = r.u8()?;
    if kind != expected_kind {
        return Err(Error::Model(format!(
            "checkpoint kind {kind} does not match expected {expected_kind}"
        )));
    }
    let n_flags = r.u8()? as usize;
    let flags = r.take(n_flags)?.to_vec();
    let cfg_len = r.u32()? as usize;
    let cfg_bytes = r.take(cfg_len)?.to_vec();
    let stored_hash = r.u64()?;
    if crate::util::fnv1a64(&cfg_bytes) != stored_hash {
        return Err(Error::Model("checkpoint config hash mismatch".into()));
    }
    let config_json = String::from_utf8_lossy(&cfg_bytes).into_owned();
    let n_stores = r.u32()? as usize;
    let mut stores = Vec::with_capacity(n_stores);
    for _ in 0..n_stores {
        let store_name = r.string()?;
        let n_params = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n_params {
            let name = r.string()?;
            let group = r.string()?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let trainable = r.u8()? == 1;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            let pid = store.add(&name, &group, rows, cols, data);
            store.get_mut(pid).trainable = trainable;
        }
        stores.push((store_name, store));
    }
    Ok((config_json, stores, flags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::cosine;

    fn tiny_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::desk(50);
        cfg.hidden_dim = 16;
        cfg.n_heads = 2;
        cfg.max_positions = 16;
        cfg
    }

    fn seqs() -> Vec<Vec<u32>> {
        vec![vec![5, 6, 7, 8], vec![9, 10, 11], vec![12, 13, 14, 15, 16]]
    }

    #[test]
    fn encode_output_width_is_hidden_dim() {
        let mut cfg = ModelConfig::desk(100);
        cfg.hidden_dim = 64;
        let bundle = EncoderBundle::new(cfg, 1).unwrap();
        let out = bundle.encode(&seqs(), 16).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|v| v.len() == 64));
    }

    #[test]
    fn encode_is_deterministic() {
        let bundle = EncoderBundle::new(tiny_cfg(), 2).unwrap();
        let a = bundle.encode(&seqs(), 16).unwrap();
        let b = bundle.encode(&seqs(), 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_cosines_stay_in_unit_interval() {
        let bundle = EncoderBundle::new(tiny_cfg(), 3).unwrap();
        let out = bundle.encode(&seqs(), 16).unwrap();
        for i in 0..out.len() {
            for j in 0..out.len() {
                let c = cosine(&out[i], &out[j]).unwrap();
                assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
            }
        }
    }

    #[test]
    fn appending_pads_never_changes_encoding() {
        let bundle = EncoderBundle::new(tiny_cfg(), 4).unwrap();
        let plain = bundle.encode(&[vec![5, 6, 7]], 16).unwrap();
        let padded = bundle.encode(&[vec![5, 6, 7, PAD, PAD, PAD]], 16).unwrap();
        for (a, b) in plain[0].iter().zip(&padded[0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn all_pad_sequence_is_an_error() {
        let bundle = EncoderBundle::new(tiny_cfg(), 5).unwrap();
        assert!(bundle.encode(&[vec![PAD, PAD]], 16).is_err());
    }

    #[test]
    fn siamese_towers_share_weights() {
        // Same graph, two encode calls: identical inputs give identical rows.
        let bundle = EncoderBundle::new(tiny_cfg(), 6).unwrap();
        let mut g = Graph::new();
        let left = bundle.encode_graph(&mut g, &[vec![5, 6, 7]], 16).unwrap();
        let right = bundle.encode_graph(&mut g, &[vec![5, 6, 7]], 16).unwrap();
        assert_eq!(g.value(left), g.value(right));
    }

    #[test]
    fn projection_composes_on_top_of_bottleneck() {
        let mut bundle = EncoderBundle::new(tiny_cfg(), 7).unwrap();
        let before = bundle.encode(&seqs(), 16).unwrap();
        bundle.attach_projection(7);
        let after = bundle.encode(&seqs(), 16).unwrap();
        assert_ne!(before, after);
        assert_eq!(after[0].len(), bundle.cfg.hidden_dim);
    }

    #[test]
    fn decoder_logits_shape_and_determinism() {
        let cfg = tiny_cfg();
        let dec = DecoderBundle::new(cfg.clone(), 8).unwrap();
        let bott = vec![0.1; cfg.hidden_dim];
        let prefix = vec![5, 6, 7];
        let a = dec.decode_logits(&bott, &prefix).unwrap();
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|row| row.len() == cfg.vocab_size));
        let b = dec.decode_logits(&bott, &prefix).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decoder_rejects_mismatched_bottleneck() {
        let dec = DecoderBundle::new(tiny_cfg(), 9).unwrap();
        assert!(dec.decode_logits(&[0.0; 3], &[5, 6]).is_err());
    }

    #[test]
    fn untrained_decoder_is_near_uniform() {
        // With 0.02-scale init, per-position CE sits near ln(vocab).
        let cfg = tiny_cfg();
        let dec = DecoderBundle::new(cfg.clone(), 10).unwrap();
        let bott = vec![0.05; cfg.hidden_dim];
        let target = vec![5u32, 9, 12, 20];
        let logits = dec.decode_logits(&bott, &target).unwrap();
        let targets: Vec<usize> = target.iter().map(|&t| t as usize).collect();
        let ce = crate::losses::dae_loss(&logits, &targets).unwrap().value;
        let uniform = (cfg.vocab_size as f64).ln();
        assert!((ce - uniform).abs() / uniform < 0.2, "ce={ce}, ln V={uniform}");
    }

    #[test]
    fn classify_uniform_logits_and_hand_value() {
        let head = ClassifierHead::new(4, 3, 11).unwrap();
        let p = softmax(&[0.0, 0.0, 0.0]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let q = softmax(&[2.0f64.ln(), 0.0]);
        assert!((q[0] - 2.0 / 3.0).abs() < 1e-9);
        assert!((q[1] - 1.0 / 3.0).abs() < 1e-9);
        let probs = head.classify(&[0.2, -0.1, 0.4, 0.0]).unwrap();
        assert_eq!(probs.len(), 3);
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(probs.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn softmax_translation_invariance_and_binary_sigmoid() {
        let z = [0.7, -0.3, 1.2];
        let a = softmax(&z);
        let b = softmax(&[z[0] + 5.0, z[1] + 5.0, z[2] + 5.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
        // K=2 equals sigmoid of the logit difference
        let z0 = 0.9;
        let z1 = -0.4;
        let p = softmax(&[z0, z1]);
        let sigmoid = 1.0 / (1.0 + (-(z0 - z1)).exp());
        assert!((p[0] - sigmoid).abs() < 1e-9);
    }

    #[test]
    fn set_trainable_is_reversible() {
        let mut bundle = EncoderBundle::new(tiny_cfg(), 12).unwrap();
        bundle.attach_projection(12);
        let originally: Vec<bool> = bundle.store.iter().map(|p| p.trainable).collect();
        set_trainable(&mut bundle, true);
        assert!(bundle.store.iter().filter(|p| p.group != "projection").all(|p| !p.trainable));
        assert!(bundle.store.iter().filter(|p| p.group == "projection").all(|p| p.trainable));
        set_trainable(&mut bundle, false);
        let now: Vec<bool> = bundle.store.iter().map(|p| p.trainable).collect();
        assert_eq!(originally, now);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        let mut bundle = EncoderBundle::new(tiny_cfg(), 13).unwrap();
        bundle.attach_projection(13);
        bundle.save(&path).unwrap();
        let loaded = EncoderBundle::load(&path).unwrap();
        assert_eq!(loaded.cfg, bundle.cfg);
        assert!(loaded.has_projection);
        for (a, b) in bundle.store.iter().zip(loaded.store.iter()) {
            assert_eq!(a.data, b.data);
            assert_eq!(a.name, b.name);
        }
        let before = bundle.encode(&seqs(), 16).unwrap();
        let after = loaded.encode(&seqs(), 16).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn checkpoint_refuses_mismatched_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        let bundle = EncoderBundle::new(tiny_cfg(), 14).unwrap();
        bundle.save(&path).unwrap();
        let loaded = EncoderBundle::load(&path).unwrap();
        let other = ModelConfig::desk(99);
        assert!(loaded.ensure_config(&other).is_err());
        assert!(loaded.ensure_config(&bundle.cfg).is_ok());
    }

    #[test]
    fn classifier_checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.ckpt");
        let bundle = EncoderBundle::new(tiny_cfg(), 15).unwrap();
        let head = ClassifierHead::new(bundle.cfg.hidden_dim, 4, 15).unwrap();
        head.save(&path, &bundle).unwrap();
        let (enc2, head2) = ClassifierHead::load(&path).unwrap();
        assert_eq!(head2.k, 4);
        let vecs = bundle.encode(&seqs(), 16).unwrap();
        let p1 = head.classify(&vecs[0]).unwrap();
        let vecs2 = enc2.encode(&seqs(), 16).unwrap();
        let p2 = head2.classify(&vecs2[0]).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn teacher_input_shifts_right_behind_bos() {
        assert_eq!(teacher_input(&[10, 11, 12], 8), vec![crate::corpus::BOS, 10, 11]);
        assert_eq!(teacher_input(&[10], 8), vec![crate::corpus::BOS]);
    }

    // Any vector producer can stand in for the built-in encoder.
    struct HashingEncoder {
        dim: usize,
    }

    impl TextEncoder for HashingEncoder {
        fn hidden_dim(&self) -> usize {
            self.dim
        }

        fn encode_batch(&self, seqs: &[Vec<u32>], truncation_length: usize) -> crate::Result<Vec<Vec<f64>>> {
            Ok(seqs
                .iter()
                .map(|seq| {
                    let mut v = vec![0.0; self.dim];
                    for &t in seq.iter().take(truncation_length) {
                        v[t as usize % self.dim] += 1.0;
                    }
                    v
                })
                .collect())
        }
    }

    #[test]
    fn external_encoders_plug_into_the_head() {
        let ext = HashingEncoder { dim: 8 };
        let head = ClassifierHead::new(ext.hidden_dim(), 2, 16).unwrap();
        let vecs = ext.encode_batch(&seqs(), 16).unwrap();
        for v in &vecs {
            let probs = head.classify(v).unwrap();
            assert_eq!(probs.len(), 2);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
