//! Self-contained desk-scale models with seeded random weights.
//!
//! Two presets cover both architecture variants the runtime supports. The
//! same (preset, seed) always produces byte-identical weight files, so tests
//! and docs can refer to a reproducible model without shipping binaries.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::config::{ActivationKind, ModelConfig, NormKind, PositionKind, TemplateSpec};
use crate::model::container::TensorArchive;
use crate::model::runtime::{Model, RuntimeError, CONFIG_FILE, WEIGHTS_FILE};
use crate::model::tokenizer::{byte_level_vocab, Tokenizer};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// RMS norm, rotary positions, gated SiLU feed-forward, grouped-query
    /// attention (the llama-family shape).
    Tiny,
    /// Layer norm, learned positions, GELU feed-forward, tied embeddings
    /// (the gpt2-family shape).
    TinyGpt2,
}

impl Preset {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tiny" => Some(Self::Tiny),
            "tiny-gpt2" => Some(Self::TinyGpt2),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Tiny => "tiny",
            Self::TinyGpt2 => "tiny-gpt2",
        }
    }
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 4,
        n_kv_heads: 2,
        d_ff: 32,
        vocab_size: 260,
        max_seq_len: 256,
        norm_type: NormKind::Rms,
        pos_type: PositionKind::Rotary,
        activation: ActivationKind::Silu,
        eps: 1e-5,
        rope_theta: 10_000.0,
        eos_token_ids: vec![257],
        bos_token_id: None,
        tie_embeddings: false,
        use_qk_norm: false,
        head_dim_override: None,
        chat_template: TemplateSpec {
            system_prefix: String::new(),
            user_prefix: "Q: ".into(),
            user_suffix: "\n".into(),
            assistant_prefix: "A:".into(),
        },
    }
}

pub fn tiny_gpt2_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 4,
        n_kv_heads: 4,
        d_ff: 32,
        vocab_size: 260,
        max_seq_len: 128,
        norm_type: NormKind::Layer,
        pos_type: PositionKind::Learned,
        activation: ActivationKind::Gelu,
        eps: 1e-5,
        rope_theta: 10_000.0,
        eos_token_ids: vec![257],
        bos_token_id: None,
        tie_embeddings: true,
        use_qk_norm: false,
        head_dim_override: None,
        chat_template: TemplateSpec::default(),
    }
}

pub fn config_for(preset: Preset) -> ModelConfig {
    match preset {
        Preset::Tiny => tiny_config(),
        Preset::TinyGpt2 => tiny_gpt2_config(),
    }
}

/// All tensors the config requires, zero-filled. Tests build hand-crafted
/// models by patching individual tensors on top of this.
pub fn zeroed_archive(config: &ModelConfig) -> TensorArchive {
    let d = config.d_model;
    let attn_dim = config.attn_dim();
    let kv_dim = config.n_kv_heads * config.head_dim();
    let mut a = TensorArchive::new();
    let mut put = |name: String, shape: Vec<usize>| {
        a.insert(name, Tensor::zeros(shape));
    };
    put("embed.weight".into(), vec![config.vocab_size, d]);
    if config.pos_type == PositionKind::Learned {
        put("pos.weight".into(), vec![config.max_seq_len, d]);
    }
    for i in 0..config.n_layers {
        put(format!("layers.{i}.attn_norm.weight"), vec![d]);
        put(format!("layers.{i}.attn.wq"), vec![d, attn_dim]);
        put(format!("layers.{i}.attn.wk"), vec![d, kv_dim]);
        put(format!("layers.{i}.attn.wv"), vec![d, kv_dim]);
        put(format!("layers.{i}.attn.wo"), vec![attn_dim, d]);
        if config.use_qk_norm {
            put(format!("layers.{i}.attn.q_norm.weight"), vec![config.head_dim()]);
            put(format!("layers.{i}.attn.k_norm.weight"), vec![config.head_dim()]);
        }
        put(format!("layers.{i}.ffn_norm.weight"), vec![d]);
        if config.activation == ActivationKind::Silu {
            put(format!("layers.{i}.ffn.w_gate"), vec![d, config.d_ff]);
        }
        put(format!("layers.{i}.ffn.w_up"), vec![d, config.d_ff]);
        put(format!("layers.{i}.ffn.w_down"), vec![config.d_ff, d]);
        if config.norm_type == NormKind::Layer {
            put(format!("layers.{i}.attn_norm.bias"), vec![d]);
            put(format!("layers.{i}.ffn_norm.bias"), vec![d]);
        }
    }
    put("final_norm.weight".into(), vec![d]);
    if config.norm_type == NormKind::Layer {
        put("final_norm.bias".into(), vec![d]);
    }
    if !config.tie_embeddings {
        put("lm_head.weight".into(), vec![d, config.vocab_size]);
    }
    a
}

/// Seeded random weights for a preset. Fill order is fixed, so the result is
/// fully determined by (preset, seed).
pub fn build_archive(preset: Preset, seed: u64) -> TensorArchive {
    random_archive(&config_for(preset), seed)
}

/// Seeded random weights for an arbitrary config, for tests that exercise
/// shapes no preset uses.
pub fn random_archive(config: &ModelConfig, seed: u64) -> TensorArchive {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.d_model;
    let attn_dim = config.attn_dim();
    let kv_dim = config.n_kv_heads * config.head_dim();
    let mut a = TensorArchive::new();

    let uniform = |shape: Vec<usize>, lo: f32, hi: f32, rng: &mut ChaCha8Rng| {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::new(shape, data).unwrap()
    };

    a.insert("embed.weight", uniform(vec![config.vocab_size, d], -1.0, 1.0, &mut rng));
    if config.pos_type == PositionKind::Learned {
        a.insert(
            "pos.weight",
            uniform(vec![config.max_seq_len, d], -0.1, 0.1, &mut rng),
        );
    }
    for i in 0..config.n_layers {
        let norm = |rng: &mut ChaCha8Rng| {
            let data = (0..d).map(|_| 1.0 + rng.random_range(-0.1..0.1f32)).collect();
            Tensor::new(vec![d], data).unwrap()
        };
        a.insert(format!("layers.{i}.attn_norm.weight"), norm(&mut rng));
        if config.norm_type == NormKind::Layer {
            a.insert(
                format!("layers.{i}.attn_norm.bias"),
                uniform(vec![d], -0.05, 0.05, &mut rng),
            );
        }
        a.insert(
            format!("layers.{i}.attn.wq"),
            uniform(vec![d, attn_dim], -0.2, 0.2, &mut rng),
        );
        a.insert(
            format!("layers.{i}.attn.wk"),
            uniform(vec![d, kv_dim], -0.2, 0.2, &mut rng),
        );
        a.insert(
            format!("layers.{i}.attn.wv"),
            uniform(vec![d, kv_dim], -0.2, 0.2, &mut rng),
        );
        a.insert(
            format!("layers.{i}.attn.wo"),
            uniform(vec![attn_dim, d], -0.2, 0.2, &mut rng),
        );
        if config.use_qk_norm {
            let hd = config.head_dim();
            let gain = |rng: &mut ChaCha8Rng| {
                let data = (0..hd).map(|_| 1.0 + rng.random_range(-0.1..0.1f32)).collect();
                Tensor::new(vec![hd], data).unwrap()
            };
            a.insert(format!("layers.{i}.attn.q_norm.weight"), gain(&mut rng));
            a.insert(format!("layers.{i}.attn.k_norm.weight"), gain(&mut rng));
        }
        a.insert(format!("layers.{i}.ffn_norm.weight"), norm(&mut rng));
        if config.norm_type == NormKind::Layer {
            a.insert(
                format!("layers.{i}.ffn_norm.bias"),
                uniform(vec![d], -0.05, 0.05, &mut rng),
            );
        }
        if config.activation == ActivationKind::Silu {
            a.insert(
                format!("layers.{i}.ffn.w_gate"),
                uniform(vec![d, config.d_ff], -0.2, 0.2, &mut rng),
            );
        }
        a.insert(
            format!("layers.{i}.ffn.w_up"),
            uniform(vec![d, config.d_ff], -0.2, 0.2, &mut rng),
        );
        a.insert(
            format!("layers.{i}.ffn.w_down"),
            uniform(vec![config.d_ff, d], -0.2, 0.2, &mut rng),
        );
    }
    {
        let data = (0..d).map(|_| 1.0 + rng.random_range(-0.1..0.1f32)).collect();
        a.insert("final_norm.weight", Tensor::new(vec![d], data).unwrap());
    }
    if config.norm_type == NormKind::Layer {
        a.insert("final_norm.bias", uniform(vec![d], -0.05, 0.05, &mut rng));
    }
    if !config.tie_embeddings {
        a.insert(
            "lm_head.weight",
            uniform(vec![d, config.vocab_size], -0.5, 0.5, &mut rng),
        );
    }
    a
}

pub fn byte_tokenizer() -> Tokenizer {
    Tokenizer::new(byte_level_vocab(), Vec::new()).expect("byte vocab is well-formed")
}

/// Build a ready-to-use in-memory fixture model.
pub fn build_model(preset: Preset, seed: u64) -> Result<Model, RuntimeError> {
    Model::from_parts(config_for(preset), build_archive(preset, seed), byte_tokenizer())
}

/// Write a loadable model directory: config, weights, tokenizer vocab.
pub fn export_model_dir(preset: Preset, seed: u64, dir: &Path) -> Result<(), RuntimeError> {
    fs::create_dir_all(dir)?;
    let config = config_for(preset);
    fs::write(dir.join(CONFIG_FILE), config.to_json())?;
    build_archive(preset, seed).save(dir.join(WEIGHTS_FILE).as_path())?;
    // BTreeMap so the vocab file is byte-identical across runs
    let vocab: BTreeMap<String, u32> = byte_level_vocab().into_iter().collect();
    fs::write(
        dir.join("vocab.json"),
        serde_json::to_string_pretty(&vocab).expect("vocab serializes"),
    )?;
    Ok(())
}
