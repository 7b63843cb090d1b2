//! Model architecture description and the chat template.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("bad config: {0}")]
    Invalid(String),
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Which normalization the blocks use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Root-mean-square norm with a gain vector, no bias.
    Rms,
    /// Mean/variance layer norm with gain and bias.
    Layer,
}

/// How token positions enter the attention computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PositionKind {
    /// Rotary embedding applied to query/key head slices.
    Rotary,
    /// A learned absolute position embedding table added after token lookup.
    Learned,
}

/// Feed-forward nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    /// Gated SiLU: `down(silu(gate(x)) * up(x))`.
    Silu,
    /// Plain two-matrix GELU: `down(gelu(up(x)))`.
    Gelu,
}

fn default_rope_theta() -> f32 {
    10_000.0
}

fn default_bos() -> Option<u32> {
    None
}

/// Static architecture parameters. Serialized as the `config.json` next to a
/// weight container.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Key/value head count; must divide `n_heads`. Query head groups share
    /// one kv head each (grouped-query attention). Equal to `n_heads` for
    /// plain multi-head attention.
    pub n_kv_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub norm_type: NormKind,
    pub pos_type: PositionKind,
    pub activation: ActivationKind,
    pub eps: f32,
    #[serde(default = "default_rope_theta")]
    pub rope_theta: f32,
    /// Token ids that terminate generation.
    pub eos_token_ids: Vec<u32>,
    /// Optional id prepended to every encoded prompt.
    #[serde(default = "default_bos")]
    pub bos_token_id: Option<u32>,
    /// Whether `lm_head.weight` is absent and the output projection reuses the
    /// embedding matrix transposed.
    #[serde(default)]
    pub tie_embeddings: bool,
    /// Per-head RMS normalization of queries and keys before rotation, as in
    /// newer instruct checkpoints; needs `attn.q_norm`/`attn.k_norm` gain
    /// vectors of length `head_dim` in every layer.
    #[serde(default)]
    pub use_qk_norm: bool,
    /// Explicit per-head width for checkpoints whose attention width is
    /// decoupled from `d_model`; absent means `d_model / n_heads`.
    #[serde(rename = "head_dim", default, skip_serializing_if = "Option::is_none")]
    pub head_dim_override: Option<usize>,
    pub chat_template: TemplateSpec,
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.head_dim_override
            .unwrap_or(self.d_model / self.n_heads)
    }

    /// Total width of the concatenated attention heads; equals `d_model`
    /// unless the per-head width is overridden.
    pub fn attn_dim(&self) -> usize {
        self.n_heads * self.head_dim()
    }

    /// How many query heads share each kv head.
    pub fn group_size(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Invalid(m));
        if self.n_layers == 0 {
            return fail("n_layers must be positive".into());
        }
        if self.n_heads == 0 {
            return fail("n_heads must be positive".into());
        }
        match self.head_dim_override {
            Some(0) => return fail("head_dim must be positive".into()),
            Some(_) => {}
            None if !self.d_model.is_multiple_of(self.n_heads) => {
                return fail(format!(
                    "d_model {} must be divisible by n_heads {}",
                    self.d_model, self.n_heads
                ));
            }
            None => {}
        }
        if self.n_kv_heads == 0 || !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return fail(format!(
                "n_heads {} must be divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            ));
        }
        if self.pos_type == PositionKind::Rotary && !self.head_dim().is_multiple_of(2) {
            return fail(format!(
                "rotary positions need an even head dim, got {}",
                self.head_dim()
            ));
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 || self.d_ff == 0 {
            return fail("vocab_size, max_seq_len, d_ff must be positive".into());
        }
        if self.eps <= 0.0 {
            return fail(format!("eps must be positive, got {}", self.eps));
        }
        for &id in &self.eos_token_ids {
            if id as usize >= self.vocab_size {
                return fail(format!("eos id {id} outside vocab"));
            }
        }
        if let Some(b) = self.bos_token_id {
            if b as usize >= self.vocab_size {
                return fail(format!("bos id {b} outside vocab"));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Literal chat-template pieces. Rendering a single user turn is:
/// `system_prefix + user_prefix + message + user_suffix + assistant_prefix`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TemplateSpec {
    #[serde(default)]
    pub system_prefix: String,
    #[serde(default)]
    pub user_prefix: String,
    #[serde(default)]
    pub user_suffix: String,
    #[serde(default)]
    pub assistant_prefix: String,
}

impl TemplateSpec {
    /// Wrap one user message for generation. The assistant prefix is left
    /// open so the model continues as the assistant.
    pub fn render(&self, message: &str) -> String {
        format!(
            "{}{}{}{}{}",
            self.system_prefix, self.user_prefix, message, self.user_suffix, self.assistant_prefix
        )
    }
}
