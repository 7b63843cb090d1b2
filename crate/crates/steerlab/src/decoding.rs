//! Sampling stack and the autoregressive generation loop.
//!
//! Pipeline per token: repetition penalty over the full prior context
//! (prompt included), temperature, softmax, optional top-k, then nucleus
//! (top-p) filtering, then a draw from the renormalized distribution using a
//! deterministic counter-based generator. A greedy flag replaces the draw
//! with argmax for bit-exact oracle tests.
//!
//! The intervention hook, when present, runs inside every decode step, so the
//! first sampled token is already steered: the prompt's last token is held
//! back from prefill and processed as the first hooked step (gen index 1).

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::runtime::{Model, ResidualHook, RuntimeError};
use crate::tensor::softmax_in_place;

#[derive(Debug, Error)]
pub enum DecodingError {
    #[error("generation parameter {name} = {value} is invalid: {reason}")]
    BadParams {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("templated prompt is {len} tokens; needs at most {max} to leave room for one new token")]
    PromptTooLong { len: usize, max: usize },
    #[error("prompt produced no tokens")]
    EmptyPrompt,
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f32,
    /// Nucleus sampling mass in (0, 1]; 1.0 keeps everything.
    pub top_p: f32,
    /// Keep the k most probable tokens before nucleus filtering; 0 disables.
    pub top_k: usize,
    /// ≥ 1; 1.0 is the identity.
    pub repetition_penalty: f32,
    pub max_new_tokens: usize,
    pub seed: u64,
    pub stop_on_eos: bool,
    /// Pick the mode of the final distribution instead of sampling.
    #[serde(default)]
    pub greedy: bool,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.95,
            top_k: 0,
            repetition_penalty: 1.1,
            max_new_tokens: 700,
            seed: 0,
            stop_on_eos: true,
            greedy: false,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), DecodingError> {
        let bad = |name: &'static str, value: f64, reason: &'static str| {
            Err(DecodingError::BadParams { name, value, reason })
        };
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature", self.temperature as f64, "must be positive");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p", self.top_p as f64, "must lie in (0, 1]");
        }
        if !(self.repetition_penalty.is_finite() && self.repetition_penalty >= 1.0) {
            return bad(
                "repetition_penalty",
                self.repetition_penalty as f64,
                "must be at least 1",
            );
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens", 0.0, "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Eos,
    Length,
}

/// One generation's full audit record. The three per-token vectors always
/// have equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub ids: Vec<u32>,
    /// Decoded text of the generated ids, minus a trailing EOS token.
    pub text: String,
    /// Log-probability of each chosen token under the final filtered,
    /// renormalized distribution it was drawn from.
    pub logprobs: Vec<f32>,
    /// Steering scale applied at each step; 0.0 when no hook was installed
    /// or the hook reports no scalar summary.
    pub applied_scales: Vec<f32>,
    pub finish_reason: FinishReason,
    /// Set when generation hit the context window before `max_new_tokens`.
    pub truncated_by_context: bool,
}

// ----------------------------------------------------------------------------
// sampling stages

/// Penalize logits of every id that already occurred: positive logits divide
/// by the penalty, nonpositive multiply. Each distinct id is penalized once.
pub fn apply_repetition_penalty(logits: &[f32], prior_ids: &[u32], penalty: f32) -> Vec<f32> {
    let mut out = logits.to_vec();
    if penalty == 1.0 {
        return out;
    }
    let seen: HashSet<u32> = prior_ids.iter().copied().collect();
    for id in seen {
        if let Some(l) = out.get_mut(id as usize) {
            *l = if *l > 0.0 { *l / penalty } else { *l * penalty };
        }
    }
    out
}

/// Keep the `k` most probable tokens and renormalize; `k == 0` disables the
/// filter. Ties at the cutoff resolve toward lower token ids.
pub fn filter_top_k(probs: &[f32], k: usize) -> Vec<f32> {
    if k == 0 || k >= probs.len() {
        return probs.to_vec();
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut out = vec![0.0; probs.len()];
    let kept: f32 = order[..k].iter().map(|&i| probs[i]).sum();
    for &i in &order[..k] {
        out[i] = probs[i] / kept;
    }
    out
}

/// Nucleus filter: keep the smallest probability-sorted prefix with
/// cumulative mass ≥ `p` (at least one token), zero the rest, renormalize.
pub fn filter_top_p(probs: &[f32], p: f32) -> Vec<f32> {
    if p >= 1.0 {
        return probs.to_vec();
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let mut cumulative = 0.0f32;
    let mut cut = order.len();
    for (rank, &i) in order.iter().enumerate() {
        cumulative += probs[i];
        if cumulative >= p {
            cut = rank + 1;
            break;
        }
    }
    let mut out = vec![0.0; probs.len()];
    let kept: f32 = order[..cut].iter().map(|&i| probs[i]).sum();
    for &i in &order[..cut] {
        out[i] = probs[i] / kept;
    }
    out
}

/// Run the whole pipeline on raw logits and pick one token. Returns the id
/// and its log-probability under the final renormalized distribution.
pub fn sample_token(
    logits: &[f32],
    params: &GenerationParams,
    prior_ids: &[u32],
    rng: &mut ChaCha8Rng,
) -> (u32, f32) {
    let penalized = apply_repetition_penalty(logits, prior_ids, params.repetition_penalty);
    let mut probs: Vec<f32> = penalized.iter().map(|l| l / params.temperature).collect();
    softmax_in_place(&mut probs);
    let probs = filter_top_k(&probs, params.top_k);
    let probs = filter_top_p(&probs, params.top_p);

    let chosen = if params.greedy {
        argmax(&probs)
    } else {
        // inverse-CDF walk in token-id order; u < 1 so the walk always lands
        let u: f64 = rng.random();
        let mut acc = 0.0f64;
        let mut chosen = probs.len() - 1;
        for (i, &q) in probs.iter().enumerate() {
            acc += q as f64;
            if u < acc {
                chosen = i;
                break;
            }
        }
        // guard against f32 mass summing marginally below 1
        while probs[chosen] == 0.0 {
            chosen -= 1;
        }
        chosen
    };
    (chosen as u32, probs[chosen].ln())
}

fn argmax(probs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

// ----------------------------------------------------------------------------
// generation loop

/// Generate a completion for one user prompt. The prompt is wrapped in the
/// model's chat template, prefilled without hooks up to (but excluding) its
/// last token, and then decoded token by token; the hook, when given, fires
/// at every decode step starting with gen index 1.
pub fn generate(
    model: &Model,
    prompt: &str,
    params: &GenerationParams,
    hook: Option<&dyn ResidualHook>,
) -> Result<GenerationOutput, DecodingError> {
    params.validate()?;
    let templated = model.config().chat_template.render(prompt);
    let prompt_ids = model.encode_prompt(&templated)?;
    if prompt_ids.is_empty() {
        return Err(DecodingError::EmptyPrompt);
    }
    let max = model.config().max_seq_len;
    if prompt_ids.len() + 1 > max {
        return Err(DecodingError::PromptTooLong {
            len: prompt_ids.len(),
            max: max - 1,
        });
    }

    let mut cache = if prompt_ids.len() > 1 {
        let (_, cache, _) = model.forward_prefill(&prompt_ids[..prompt_ids.len() - 1])?;
        cache
    } else {
        model.new_cache()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut prior = prompt_ids.clone();
    let mut next_input = *prompt_ids.last().expect("nonempty prompt");
    let mut ids = Vec::new();
    let mut logprobs = Vec::new();
    let mut applied_scales = Vec::new();
    let mut finish_reason = FinishReason::Length;
    let mut truncated_by_context = false;

    for k in 1..=params.max_new_tokens {
        let logits = match model.decode_step(&mut cache, next_input, k, hook) {
            Ok((logits, _)) => logits,
            Err(RuntimeError::ContextFull(at)) => {
                log::warn!("context window full at {at} positions; truncating generation");
                truncated_by_context = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let (token, logprob) = sample_token(&logits, params, &prior, &mut rng);
        ids.push(token);
        logprobs.push(logprob);
        applied_scales.push(hook.and_then(|h| h.audit_scale(k)).unwrap_or(0.0));
        prior.push(token);
        if params.stop_on_eos && model.config().eos_token_ids.contains(&token) {
            finish_reason = FinishReason::Eos;
            break;
        }
        next_input = token;
    }

    let text_ids = match finish_reason {
        FinishReason::Eos => &ids[..ids.len() - 1],
        FinishReason::Length => &ids[..],
    };
    let text = model
        .tokenizer()
        .decode(text_ids)
        .map_err(RuntimeError::from)?;
    Ok(GenerationOutput {
        ids,
        text,
        logprobs,
        applied_scales,
        finish_reason,
        truncated_by_context,
    })
}
