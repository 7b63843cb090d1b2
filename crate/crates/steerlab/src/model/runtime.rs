//! The transformer runtime: loading, prefill, incremental decode with a KV
//! cache, residual-stream hooks, and per-layer hidden-state capture.
//!
//! A loaded [`Model`] is immutable; any number of sessions may read it
//! concurrently, each owning its private [`KvCache`].

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::config::{ActivationKind, ConfigError, ModelConfig, NormKind, PositionKind};
use crate::model::container::{ContainerError, TensorArchive};
use crate::model::tokenizer::{Tokenizer, TokenizerError};
use crate::tensor::{
    dot, gelu, rope_rotate_in_place, silu, softmax_in_place, vec_mat, Tensor,
};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("model io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("tokenizer uses ids up to {max_id} but vocab_size is {vocab_size}")]
    VocabMismatch { max_id: usize, vocab_size: usize },
    #[error("sequence of {len} tokens exceeds context of {max} positions")]
    SequenceTooLong { len: usize, max: usize },
    #[error("context window full at {0} positions")]
    ContextFull(usize),
    #[error("prefix text produced no tokens")]
    EmptyPrefix,
    #[error("empty token sequence")]
    EmptySequence,
}

// ----------------------------------------------------------------------------
// hook contract

/// Caller-supplied transformation of the residual stream. During decode the
/// runtime calls `apply` exactly once per (layer, generated token) on each
/// block's residual output at the current position; prefill never calls it.
/// `gen_index` is 1 for the first generated token.
pub trait ResidualHook: Send + Sync {
    fn apply(&self, layer: usize, gen_index: usize, hidden: &mut [f32]);

    /// Scalar a generation loop may record per token for audit output.
    /// `None` when the hook has no single-scale summary.
    fn audit_scale(&self, _gen_index: usize) -> Option<f32> {
        None
    }
}

impl<F> ResidualHook for F
where
    F: Fn(usize, usize, &mut [f32]) + Send + Sync,
{
    fn apply(&self, layer: usize, gen_index: usize, hidden: &mut [f32]) {
        self(layer, gen_index, hidden)
    }
}

// ----------------------------------------------------------------------------
// cache and captured states

/// Per-session key/value cache. Layout per layer is position-major:
/// `[pos][kv_head][head_dim]`, appended as positions are processed.
pub struct KvCache {
    layers: Vec<LayerKv>,
    len: usize,
    max_len: usize,
    kv_dim: usize,
    head_dim: usize,
}

struct LayerKv {
    k: Vec<f32>,
    v: Vec<f32>,
}

impl KvCache {
    fn new(config: &ModelConfig) -> Self {
        let kv_dim = config.n_kv_heads * config.head_dim();
        Self {
            layers: (0..config.n_layers)
                .map(|_| LayerKv {
                    k: Vec::new(),
                    v: Vec::new(),
                })
                .collect(),
            len: 0,
            max_len: config.max_seq_len,
            kv_dim,
            head_dim: config.head_dim(),
        }
    }

    /// Number of positions fully processed.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    fn append(&mut self, layer: usize, k: &[f32], v: &[f32]) {
        debug_assert_eq!(k.len(), self.kv_dim);
        self.layers[layer].k.extend_from_slice(k);
        self.layers[layer].v.extend_from_slice(v);
    }

    fn key(&self, layer: usize, pos: usize, kv_head: usize) -> &[f32] {
        let start = (pos * self.kv_dim / self.head_dim + kv_head) * self.head_dim;
        &self.layers[layer].k[start..start + self.head_dim]
    }

    fn value(&self, layer: usize, pos: usize, kv_head: usize) -> &[f32] {
        let start = (pos * self.kv_dim / self.head_dim + kv_head) * self.head_dim;
        &self.layers[layer].v[start..start + self.head_dim]
    }

    fn advance(&mut self) {
        self.len += 1;
    }
}

/// Residual-stream output of every block at one token position.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerHiddenStates(Vec<Vec<f32>>);

impl LayerHiddenStates {
    pub fn new(per_layer: Vec<Vec<f32>>) -> Self {
        Self(per_layer)
    }

    pub fn n_layers(&self) -> usize {
        self.0.len()
    }

    pub fn layer(&self, l: usize) -> &[f32] {
        &self.0[l]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.0.iter().map(|v| v.as_slice())
    }

    pub fn into_inner(self) -> Vec<Vec<f32>> {
        self.0
    }
}

// ----------------------------------------------------------------------------
// weights

struct NormParams {
    weight: Vec<f32>,
    bias: Option<Vec<f32>>,
}

impl NormParams {
    fn apply(&self, x: &[f32], kind: NormKind, eps: f32) -> Vec<f32> {
        match kind {
            NormKind::Rms => crate::tensor::rms_norm(x, &self.weight, eps),
            NormKind::Layer => crate::tensor::layer_norm(
                x,
                &self.weight,
                self.bias.as_deref().expect("layer norm has bias"),
                eps,
            ),
        }
    }
}

struct Block {
    attn_norm: NormParams,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    /// Per-head RMS gains of length `head_dim`, present iff `use_qk_norm`.
    q_norm: Option<Vec<f32>>,
    k_norm: Option<Vec<f32>>,
    ffn_norm: NormParams,
    w_gate: Option<Tensor>,
    w_up: Tensor,
    w_down: Tensor,
}

/// A loaded model: config, structured weights, tokenizer, and identity.
pub struct Model {
    config: ModelConfig,
    tokenizer: Tokenizer,
    embed: Tensor,
    pos_embed: Option<Tensor>,
    blocks: Vec<Block>,
    final_norm: NormParams,
    /// Output projection stored `[d_model, vocab]`; materialized from the
    /// embedding transpose when `tie_embeddings` is set.
    lm_head: Tensor,
    model_id: String,
}

/// Conventional file names inside a model directory.
pub const CONFIG_FILE: &str = "config.json";
pub const WEIGHTS_FILE: &str = "model.safetensors";

impl Model {
    /// Load `config.json`, `model.safetensors`, and tokenizer files from a
    /// directory.
    pub fn load(dir: &Path) -> Result<Self, RuntimeError> {
        let config = ModelConfig::from_json(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
        let bytes = fs::read(dir.join(WEIGHTS_FILE))?;
        let archive = TensorArchive::from_bytes(&bytes)?;
        let tokenizer = Tokenizer::load(dir)?;
        Self::from_parts(config, archive, tokenizer)
    }

    /// Assemble a model from already-parsed parts. The model id is the first
    /// 16 hex digits of the SHA-256 of the canonical container serialization.
    pub fn from_parts(
        config: ModelConfig,
        archive: TensorArchive,
        tokenizer: Tokenizer,
    ) -> Result<Self, RuntimeError> {
        config.validate()?;
        if tokenizer.vocab_size() > config.vocab_size {
            return Err(RuntimeError::VocabMismatch {
                max_id: tokenizer.vocab_size() - 1,
                vocab_size: config.vocab_size,
            });
        }
        let model_id = hex::encode(&Sha256::digest(archive.to_bytes())[..8]);

        let d = config.d_model;
        let attn_dim = config.attn_dim();
        let kv_dim = config.n_kv_heads * config.head_dim();
        let norm_params = |name: &str| -> Result<NormParams, ContainerError> {
            let weight = archive.get_shaped(&format!("{name}.weight"), &[d])?;
            let bias = match config.norm_type {
                NormKind::Rms => None,
                NormKind::Layer => {
                    Some(archive.get_shaped(&format!("{name}.bias"), &[d])?.data().to_vec())
                }
            };
            Ok(NormParams {
                weight: weight.data().to_vec(),
                bias,
            })
        };

        let embed = archive
            .get_shaped("embed.weight", &[config.vocab_size, d])?
            .clone();
        let pos_embed = match config.pos_type {
            PositionKind::Rotary => None,
            PositionKind::Learned => Some(
                archive
                    .get_shaped("pos.weight", &[config.max_seq_len, d])?
                    .clone(),
            ),
        };
        let mut blocks = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let p = |suffix: &str| format!("layers.{i}.{suffix}");
            let w_gate = match config.activation {
                ActivationKind::Silu => Some(
                    archive
                        .get_shaped(&p("ffn.w_gate"), &[d, config.d_ff])?
                        .clone(),
                ),
                ActivationKind::Gelu => None,
            };
            let head_gain = |suffix: &str| -> Result<Option<Vec<f32>>, ContainerError> {
                if !config.use_qk_norm {
                    return Ok(None);
                }
                let t = archive.get_shaped(&p(suffix), &[config.head_dim()])?;
                Ok(Some(t.data().to_vec()))
            };
            blocks.push(Block {
                attn_norm: norm_params(&p("attn_norm"))?,
                wq: archive.get_shaped(&p("attn.wq"), &[d, attn_dim])?.clone(),
                wk: archive.get_shaped(&p("attn.wk"), &[d, kv_dim])?.clone(),
                wv: archive.get_shaped(&p("attn.wv"), &[d, kv_dim])?.clone(),
                wo: archive.get_shaped(&p("attn.wo"), &[attn_dim, d])?.clone(),
                q_norm: head_gain("attn.q_norm.weight")?,
                k_norm: head_gain("attn.k_norm.weight")?,
                ffn_norm: norm_params(&p("ffn_norm"))?,
                w_gate,
                w_up: archive.get_shaped(&p("ffn.w_up"), &[d, config.d_ff])?.clone(),
                w_down: archive
                    .get_shaped(&p("ffn.w_down"), &[config.d_ff, d])?
                    .clone(),
            });
        }
        let final_norm = norm_params("final_norm")?;
        let lm_head = if config.tie_embeddings {
            transpose(&embed)
        } else {
            archive
                .get_shaped("lm_head.weight", &[d, config.vocab_size])?
                .clone()
        };
        Ok(Self {
            config,
            tokenizer,
            embed,
            pos_embed,
            blocks,
            final_norm,
            lm_head,
            model_id,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache::new(&self.config)
    }

    /// SHA-256 over a canonical re-serialization of every weight the model
    /// holds. Equal checksums before and after a run certify immutability.
    pub fn weights_checksum(&self) -> String {
        let mut archive = TensorArchive::new();
        archive.insert("embed.weight", self.embed.clone());
        if let Some(p) = &self.pos_embed {
            archive.insert("pos.weight", p.clone());
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let mut put_norm = |name: String, n: &NormParams| {
                archive.insert(
                    format!("{name}.weight"),
                    Tensor::new(vec![n.weight.len()], n.weight.clone()).unwrap(),
                );
                if let Some(bias) = &n.bias {
                    archive.insert(
                        format!("{name}.bias"),
                        Tensor::new(vec![bias.len()], bias.clone()).unwrap(),
                    );
                }
            };
            put_norm(format!("layers.{i}.attn_norm"), &b.attn_norm);
            put_norm(format!("layers.{i}.ffn_norm"), &b.ffn_norm);
            archive.insert(format!("layers.{i}.attn.wq"), b.wq.clone());
            archive.insert(format!("layers.{i}.attn.wk"), b.wk.clone());
            archive.insert(format!("layers.{i}.attn.wv"), b.wv.clone());
            archive.insert(format!("layers.{i}.attn.wo"), b.wo.clone());
            let mut put_gain = |name: String, gain: &Option<Vec<f32>>| {
                if let Some(g) = gain {
                    archive.insert(name, Tensor::new(vec![g.len()], g.clone()).unwrap());
                }
            };
            put_gain(format!("layers.{i}.attn.q_norm.weight"), &b.q_norm);
            put_gain(format!("layers.{i}.attn.k_norm.weight"), &b.k_norm);
            if let Some(g) = &b.w_gate {
                archive.insert(format!("layers.{i}.ffn.w_gate"), g.clone());
            }
            archive.insert(format!("layers.{i}.ffn.w_up"), b.w_up.clone());
            archive.insert(format!("layers.{i}.ffn.w_down"), b.w_down.clone());
        }
        archive.insert(
            "final_norm.weight",
            Tensor::new(
                vec![self.final_norm.weight.len()],
                self.final_norm.weight.clone(),
            )
            .unwrap(),
        );
        if let Some(bias) = &self.final_norm.bias {
            archive.insert(
                "final_norm.bias",
                Tensor::new(vec![bias.len()], bias.clone()).unwrap(),
            );
        }
        archive.insert("lm_head.weight", self.lm_head.clone());
        hex::encode(Sha256::digest(archive.to_bytes()))
    }

    /// Encode a prompt for the model, prepending the configured BOS id when
    /// present.
    pub fn encode_prompt(&self, text: &str) -> Result<Vec<u32>, RuntimeError> {
        let mut ids = match self.config.bos_token_id {
            Some(b) => vec![b],
            None => Vec::new(),
        };
        ids.extend(self.tokenizer.encode(text)?);
        Ok(ids)
    }

    /// Run all prompt positions through the model without hooks. Returns the
    /// last position's logits, the filled cache, and the last position's
    /// per-layer hidden states.
    pub fn forward_prefill(
        &self,
        ids: &[u32],
    ) -> Result<(Vec<f32>, KvCache, LayerHiddenStates), RuntimeError> {
        if ids.is_empty() {
            return Err(RuntimeError::EmptySequence);
        }
        if ids.len() > self.config.max_seq_len {
            return Err(RuntimeError::SequenceTooLong {
                len: ids.len(),
                max: self.config.max_seq_len,
            });
        }
        let mut cache = self.new_cache();
        let mut last = None;
        for &id in ids {
            last = Some(self.forward_pos(&mut cache, id, None)?);
        }
        let (logits, hiddens) = last.expect("nonempty ids");
        Ok((logits, cache, hiddens))
    }

    /// Process one more token at the next position. `gen_index` is the
    /// 1-based index of the token being generated; the hook, when present,
    /// runs once per layer on the residual output before it feeds the next
    /// block (and, for the last block, the final norm and LM head).
    pub fn decode_step(
        &self,
        cache: &mut KvCache,
        token: u32,
        gen_index: usize,
        hook: Option<&dyn ResidualHook>,
    ) -> Result<(Vec<f32>, LayerHiddenStates), RuntimeError> {
        self.forward_pos(cache, token, hook.map(|h| (h, gen_index)))
    }

    /// Hidden states of the final token of a prefix, from a hook-free
    /// prefill. With `templated` the prefix is framed as the start of an
    /// assistant turn first.
    pub fn capture_prefix_hiddens(
        &self,
        prefix: &str,
        templated: bool,
    ) -> Result<LayerHiddenStates, RuntimeError> {
        let text = if templated {
            format!("{}{}", self.config.chat_template.assistant_prefix, prefix)
        } else {
            prefix.to_string()
        };
        let ids = self.encode_prompt(&text)?;
        if ids.is_empty() {
            return Err(RuntimeError::EmptyPrefix);
        }
        let (_, _, hiddens) = self.forward_prefill(&ids)?;
        Ok(hiddens)
    }

    /// One position of the forward pass; the common core of prefill and
    /// decode. Appends to the cache and returns logits plus the per-layer
    /// residual outputs at this position.
    fn forward_pos(
        &self,
        cache: &mut KvCache,
        token: u32,
        hook: Option<(&dyn ResidualHook, usize)>,
    ) -> Result<(Vec<f32>, LayerHiddenStates), RuntimeError> {
        let pos = cache.len();
        if pos >= cache.max_len() {
            return Err(RuntimeError::ContextFull(pos));
        }
        let cfg = &self.config;
        let head_dim = cfg.head_dim();
        let group = cfg.group_size();
        let scale = 1.0 / (head_dim as f64).sqrt();

        let mut x = self.embed.row(token as usize).to_vec();
        if let Some(p) = &self.pos_embed {
            for (a, b) in x.iter_mut().zip(p.row(pos)) {
                *a += b;
            }
        }

        let mut captured = Vec::with_capacity(cfg.n_layers);
        for (layer, block) in self.blocks.iter().enumerate() {
            let normed = block.attn_norm.apply(&x, cfg.norm_type, cfg.eps);
            let mut q = vec_mat(&normed, &block.wq).expect("wq shape checked at load");
            let mut k = vec_mat(&normed, &block.wk).expect("wk shape checked at load");
            let v = vec_mat(&normed, &block.wv).expect("wv shape checked at load");
            if let Some(gain) = &block.q_norm {
                for h in q.chunks_exact_mut(head_dim) {
                    h.copy_from_slice(&crate::tensor::rms_norm(h, gain, cfg.eps));
                }
            }
            if let Some(gain) = &block.k_norm {
                for h in k.chunks_exact_mut(head_dim) {
                    h.copy_from_slice(&crate::tensor::rms_norm(h, gain, cfg.eps));
                }
            }
            if cfg.pos_type == PositionKind::Rotary {
                for h in q.chunks_exact_mut(head_dim) {
                    rope_rotate_in_place(h, pos, cfg.rope_theta);
                }
                for h in k.chunks_exact_mut(head_dim) {
                    rope_rotate_in_place(h, pos, cfg.rope_theta);
                }
            }
            cache.append(layer, &k, &v);

            let mut attn = vec![0.0f32; cfg.attn_dim()];
            for h in 0..cfg.n_heads {
                let q_h = &q[h * head_dim..(h + 1) * head_dim];
                let kv_h = h / group;
                let mut scores: Vec<f32> = (0..=pos)
                    .map(|t| (dot(q_h, cache.key(layer, t, kv_h)) * scale) as f32)
                    .collect();
                softmax_in_place(&mut scores);
                let out_h = &mut attn[h * head_dim..(h + 1) * head_dim];
                for (t, &w) in scores.iter().enumerate() {
                    for (o, &vv) in out_h.iter_mut().zip(cache.value(layer, t, kv_h)) {
                        *o += w * vv;
                    }
                }
            }
            let attn_out = vec_mat(&attn, &block.wo).expect("wo shape checked at load");
            for (a, b) in x.iter_mut().zip(&attn_out) {
                *a += b;
            }

            let normed = block.ffn_norm.apply(&x, cfg.norm_type, cfg.eps);
            let up = vec_mat(&normed, &block.w_up).expect("w_up shape checked at load");
            let inner: Vec<f32> = match (&block.w_gate, cfg.activation) {
                (Some(w_gate), ActivationKind::Silu) => {
                    let gate = vec_mat(&normed, w_gate).expect("w_gate shape checked at load");
                    gate.iter().zip(&up).map(|(g, u)| silu(*g) * u).collect()
                }
                (None, ActivationKind::Gelu) => up.iter().map(|u| gelu(*u)).collect(),
                _ => unreachable!("gate presence fixed by activation at load"),
            };
            let ffn_out = vec_mat(&inner, &block.w_down).expect("w_down shape checked at load");
            for (a, b) in x.iter_mut().zip(&ffn_out) {
                *a += b;
            }

            if let Some((h, gen_index)) = hook {
                h.apply(layer, gen_index, &mut x);
            }
            captured.push(x.clone());
        }
        cache.advance();

        let normed = self.final_norm.apply(&x, cfg.norm_type, cfg.eps);
        let logits = vec_mat(&normed, &self.lm_head).expect("lm_head shape checked at load");
        Ok((logits, LayerHiddenStates::new(captured)))
    }
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut out = vec![0.0f32; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.data()[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn tiny() -> Model {
        fixture::build_model(fixture::Preset::Tiny, 42).unwrap()
    }

    #[test]
    fn prefill_reports_layer_count_and_shapes() {
        let m = tiny();
        let (logits, cache, hiddens) = m.forward_prefill(&[10, 20, 30]).unwrap();
        assert_eq!(logits.len(), m.config().vocab_size);
        assert_eq!(cache.len(), 3);
        assert_eq!(hiddens.n_layers(), m.config().n_layers);
        assert_eq!(hiddens.layer(0).len(), m.config().d_model);
    }

    #[test]
    fn prefill_rejects_empty_and_too_long() {
        let m = tiny();
        assert!(matches!(
            m.forward_prefill(&[]),
            Err(RuntimeError::EmptySequence)
        ));
        let too_long = vec![0u32; m.config().max_seq_len + 1];
        assert!(matches!(
            m.forward_prefill(&too_long),
            Err(RuntimeError::SequenceTooLong { .. })
        ));
    }

    #[test]
    fn decode_past_context_errors() {
        let m = tiny();
        let ids = vec![1u32; m.config().max_seq_len];
        let (_, mut cache, _) = m.forward_prefill(&ids).unwrap();
        assert!(matches!(
            m.decode_step(&mut cache, 5, 1, None),
            Err(RuntimeError::ContextFull(_))
        ));
    }

    #[test]
    fn identity_hook_is_bit_identical_to_no_hook() {
        let m = tiny();
        let run = |hook: Option<&dyn ResidualHook>| {
            let (_, mut cache, _) = m.forward_prefill(&[5, 6, 7]).unwrap();
            let (logits, _) = m.decode_step(&mut cache, 8, 1, hook).unwrap();
            logits
        };
        let identity = |_: usize, _: usize, _: &mut [f32]| {};
        let a = run(None);
        let b = run(Some(&identity));
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn hook_fires_once_per_layer_per_generated_token() {
        let m = tiny();
        let count = AtomicUsize::new(0);
        let counter = |_: usize, _: usize, _: &mut [f32]| {
            count.fetch_add(1, Ordering::Relaxed);
        };
        let (_, mut cache, _) = m.forward_prefill(&[1, 2, 3, 4]).unwrap();
        assert_eq!(count.load(Ordering::Relaxed), 0, "no hooks during prefill");
        for k in 1..=5 {
            m.decode_step(&mut cache, 9, k, Some(&counter)).unwrap();
        }
        assert_eq!(count.load(Ordering::Relaxed), 5 * m.config().n_layers);
    }

    #[test]
    fn hook_sees_one_based_gen_index() {
        let m = tiny();
        let seen = std::sync::Mutex::new(Vec::new());
        let recorder = |layer: usize, k: usize, _: &mut [f32]| {
            seen.lock().unwrap().push((layer, k));
        };
        let (_, mut cache, _) = m.forward_prefill(&[1]).unwrap();
        m.decode_step(&mut cache, 2, 1, Some(&recorder)).unwrap();
        m.decode_step(&mut cache, 3, 2, Some(&recorder)).unwrap();
        assert_eq!(*seen.lock().unwrap(), vec![(0, 1), (1, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn capture_prefix_hiddens_is_deterministic_and_matches_prefill() {
        let m = tiny();
        let a = m.capture_prefix_hiddens("Sure, here are the details", false).unwrap();
        let b = m.capture_prefix_hiddens("Sure, here are the details", false).unwrap();
        assert_eq!(a, b);
        let ids = m.encode_prompt("Sure, here are the details").unwrap();
        let (_, _, c) = m.forward_prefill(&ids).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn single_token_prefix_equals_length_one_prefill() {
        let m = tiny();
        let captured = m.capture_prefix_hiddens("A", false).unwrap();
        let (_, _, direct) = m.forward_prefill(&[b'A' as u32]).unwrap();
        assert_eq!(captured, direct);
    }

    #[test]
    fn templated_capture_prepends_assistant_prefix() {
        let mut m = tiny();
        // give the template a visible assistant prefix, then compare against
        // manual framing
        let mut cfg = m.config().clone();
        cfg.chat_template.assistant_prefix = "<a>".into();
        m = Model::from_parts(
            cfg,
            fixture::build_archive(fixture::Preset::Tiny, 42),
            crate::model::tokenizer::Tokenizer::new(
                crate::model::tokenizer::byte_level_vocab(),
                Vec::new(),
            )
            .unwrap(),
        )
        .unwrap();
        let templated = m.capture_prefix_hiddens("hi", true).unwrap();
        let manual = m.capture_prefix_hiddens("<a>hi", false).unwrap();
        assert_eq!(templated, manual);
    }

    #[test]
    fn weights_checksum_is_stable_across_forward_passes() {
        let m = tiny();
        let before = m.weights_checksum();
        let _ = m.forward_prefill(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(before, m.weights_checksum());
    }

    #[test]
    fn missing_tensor_is_named() {
        let cfg = fixture::tiny_config();
        let mut archive = fixture::build_archive(fixture::Preset::Tiny, 42);
        let mut pruned = TensorArchive::new();
        for name in archive.names() {
            if name != "layers.1.attn.wk" {
                pruned.insert(name, archive.get(name).unwrap().clone());
            }
        }
        archive = pruned;
        let tok = crate::model::tokenizer::Tokenizer::new(
            crate::model::tokenizer::byte_level_vocab(),
            Vec::new(),
        )
        .unwrap();
        let err = match Model::from_parts(cfg, archive, tok) {
            Err(e) => e,
            Ok(_) => panic!("load succeeded despite missing tensor"),
        };
        assert!(err.to_string().contains("layers.1.attn.wk"), "{err}");
    }

    #[test]
    fn transpose_round_trip() {
        let t = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let tt = transpose(&transpose(&t));
        assert_eq!(t, tt);
        assert_eq!(transpose(&t).shape(), &[3, 2]);
        assert_eq!(transpose(&t).row(0), &[1., 4.]);
    }
}
