//! Steering-vector construction and the residual-stream intervention hook.
//!
//! A steering vector is built per layer as the mean difference between the
//! final-token hidden states of a compliance prefix set and a refusal prefix
//! set, then L2-normalized per layer. During generation the hook adds the
//! layer's unit vector scaled by a two-phase schedule: full strength for the
//! first `tau` generated tokens, damped by `beta` afterwards.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::runtime::{Model, ResidualHook, RuntimeError};
use crate::tensor::{add_scaled_in_place, l2_normalize, TensorError};

#[derive(Debug, Error)]
pub enum SteeringError {
    #[error("prefix set is empty")]
    EmptyPrefixSet,
    #[error("prefix set contains an empty string (line {0})")]
    EmptyPrefix(usize),
    #[error("duplicate prefix in set: {0:?}")]
    DuplicatePrefix(String),
    #[error("steering vector is zero at layer(s) {0:?}; prefix sets cancel or are degenerate")]
    ZeroSteeringVector(Vec<usize>),
    #[error("steering vector is already normalized")]
    AlreadyNormalized,
    #[error("steering vector is not normalized; normalize it first")]
    NotNormalized,
    #[error("steering vector has {vector} layers but the model has {model}")]
    LayerMismatch { vector: usize, model: usize },
    #[error("steering vector was built on model {vector} but this model is {model}")]
    ModelIdMismatch { vector: String, model: String },
    #[error("schedule parameter {name} = {value} is invalid: {reason}")]
    BadSchedule {
        name: &'static str,
        value: f32,
        reason: &'static str,
    },
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("prefix file io: {0}")]
    Io(#[from] std::io::Error),
    #[error("steering vector file: {0}")]
    Json(#[from] serde_json::Error),
}

// ----------------------------------------------------------------------------
// prefix sets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefixRole {
    Compliance,
    Refusal,
}

/// An ordered set of distinct, nonempty prefix strings with a role.
#[derive(Debug, Clone)]
pub struct PrefixSet {
    role: PrefixRole,
    prefixes: Vec<String>,
}

impl PrefixSet {
    pub fn new(role: PrefixRole, prefixes: Vec<String>) -> Result<Self, SteeringError> {
        if prefixes.is_empty() {
            return Err(SteeringError::EmptyPrefixSet);
        }
        for (i, p) in prefixes.iter().enumerate() {
            if p.is_empty() {
                return Err(SteeringError::EmptyPrefix(i + 1));
            }
            if prefixes[..i].contains(p) {
                return Err(SteeringError::DuplicatePrefix(p.clone()));
            }
        }
        Ok(Self { role, prefixes })
    }

    /// Parse a prefix file: one prefix per line, blank lines and `#` comments
    /// ignored.
    pub fn from_file(role: PrefixRole, path: &Path) -> Result<Self, SteeringError> {
        let text = fs::read_to_string(path)?;
        Self::from_text(role, &text)
    }

    pub fn from_text(role: PrefixRole, text: &str) -> Result<Self, SteeringError> {
        let prefixes = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty() && !l.trim_start().starts_with('#'))
            .map(str::to_string)
            .collect();
        Self::new(role, prefixes)
    }

    pub fn role(&self) -> PrefixRole {
        self.role
    }

    pub fn prefixes(&self) -> &[String] {
        &self.prefixes
    }

    pub fn len(&self) -> usize {
        self.prefixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefixes.is_empty()
    }

    /// Order-sensitive content hash used for provenance tracking.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.prefixes {
            hasher.update(p.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}

// ----------------------------------------------------------------------------
// steering vector

/// Where a steering vector came from, for mismatch detection at use time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    pub compliance_hash: String,
    pub refusal_hash: String,
    /// Whether prefixes were framed as assistant turns during capture.
    pub templated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteeringVector {
    pub n_layers: usize,
    pub d_model: usize,
    pub normalized: bool,
    #[serde(flatten)]
    pub provenance: Provenance,
    /// One vector per transformer block, outermost first.
    pub layers: Vec<Vec<f32>>,
}

impl SteeringVector {
    pub fn layer(&self, l: usize) -> &[f32] {
        &self.layers[l]
    }

    pub fn save(&self, path: &Path) -> Result<(), SteeringError> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SteeringError> {
        let v: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        Ok(v)
    }

    /// Export layer vectors into the weight-container format for interchange.
    /// Provenance does not survive this export.
    pub fn to_archive(&self) -> crate::model::container::TensorArchive {
        let mut a = crate::model::container::TensorArchive::new();
        for (i, v) in self.layers.iter().enumerate() {
            a.insert(
                format!("steering.layers.{i}"),
                crate::tensor::Tensor::new(vec![v.len()], v.clone()).expect("layer vector"),
            );
        }
        a
    }

    /// Check the vector fits a model (layer count and identity).
    /// `allow_model_mismatch` downgrades an id mismatch to a warning for
    /// deliberate cross-model use.
    pub fn check_against(
        &self,
        model: &Model,
        allow_model_mismatch: bool,
    ) -> Result<(), SteeringError> {
        if self.n_layers != model.config().n_layers {
            return Err(SteeringError::LayerMismatch {
                vector: self.n_layers,
                model: model.config().n_layers,
            });
        }
        if self.provenance.model_id != model.model_id() {
            if !allow_model_mismatch {
                return Err(SteeringError::ModelIdMismatch {
                    vector: self.provenance.model_id.clone(),
                    model: model.model_id().to_string(),
                });
            }
            log::warn!(
                "steering vector model id {} does not match model {}; proceeding as requested",
                self.provenance.model_id,
                model.model_id()
            );
        }
        Ok(())
    }
}

/// Build the raw (unnormalized) steering vector: per layer, the mean of all
/// pairwise differences between compliance and refusal final-token hidden
/// states, which reduces to mean(compliance) − mean(refusal).
pub fn build_raw_steering(
    model: &Model,
    compliance: &PrefixSet,
    refusal: &PrefixSet,
    templated: bool,
) -> Result<SteeringVector, SteeringError> {
    if compliance.is_empty() || refusal.is_empty() {
        return Err(SteeringError::EmptyPrefixSet);
    }
    let n_layers = model.config().n_layers;
    let d_model = model.config().d_model;

    let mean_hiddens = |set: &PrefixSet| -> Result<Vec<Vec<f64>>, SteeringError> {
        let mut acc = vec![vec![0.0f64; d_model]; n_layers];
        for prefix in set.prefixes() {
            let hiddens = model.capture_prefix_hiddens(prefix, templated)?;
            for (layer_acc, layer) in acc.iter_mut().zip(hiddens.iter()) {
                for (a, &h) in layer_acc.iter_mut().zip(layer) {
                    *a += h as f64;
                }
            }
        }
        let n = set.len() as f64;
        for layer_acc in &mut acc {
            for a in layer_acc.iter_mut() {
                *a /= n;
            }
        }
        Ok(acc)
    };

    let com_mean = mean_hiddens(compliance)?;
    let ref_mean = mean_hiddens(refusal)?;
    let layers: Vec<Vec<f32>> = com_mean
        .iter()
        .zip(&ref_mean)
        .map(|(c, r)| c.iter().zip(r).map(|(a, b)| (a - b) as f32).collect())
        .collect();

    Ok(SteeringVector {
        n_layers,
        d_model,
        normalized: false,
        provenance: Provenance {
            model_id: model.model_id().to_string(),
            compliance_hash: compliance.content_hash(),
            refusal_hash: refusal.content_hash(),
            templated,
        },
        layers,
    })
}

/// L2-normalize each layer independently. Layers with (near-)zero norm make
/// the whole operation fail, naming them.
pub fn normalize_steering(raw: &SteeringVector) -> Result<SteeringVector, SteeringError> {
    if raw.normalized {
        return Err(SteeringError::AlreadyNormalized);
    }
    let mut zero_layers = Vec::new();
    let mut layers = Vec::with_capacity(raw.layers.len());
    for (i, v) in raw.layers.iter().enumerate() {
        match l2_normalize(v) {
            Ok(u) => layers.push(u),
            Err(TensorError::ZeroVector) => zero_layers.push(i),
            Err(e) => unreachable!("l2_normalize only fails on zero vectors: {e}"),
        }
    }
    if !zero_layers.is_empty() {
        return Err(SteeringError::ZeroSteeringVector(zero_layers));
    }
    Ok(SteeringVector {
        normalized: true,
        layers,
        ..raw.clone()
    })
}

// ----------------------------------------------------------------------------
// schedule and hook

/// The two-phase strength schedule over generated-token index `k` (1-based):
/// `alpha` while `k <= tau`, `alpha * beta` afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterventionSchedule {
    pub alpha: f32,
    pub beta: f32,
    pub tau: usize,
}

impl InterventionSchedule {
    pub fn new(alpha: f32, beta: f32, tau: usize) -> Result<Self, SteeringError> {
        let check = |name: &'static str, value: f32| -> Result<(), SteeringError> {
            if !value.is_finite() || value < 0.0 {
                return Err(SteeringError::BadSchedule {
                    name,
                    value,
                    reason: "must be finite and nonnegative",
                });
            }
            Ok(())
        };
        check("alpha", alpha)?;
        check("beta", beta)?;
        Ok(Self { alpha, beta, tau })
    }

    /// Strength applied to the k-th generated token, `k >= 1`.
    pub fn effective_scale(&self, k: usize) -> f32 {
        debug_assert!(k >= 1, "generated-token index is 1-based");
        if k <= self.tau {
            self.alpha
        } else {
            self.alpha * self.beta
        }
    }
}

/// The hook that adds `effective_scale(k) * layers[layer]` to the residual
/// stream. Pure and shareable across sessions.
pub struct SteeringHook {
    vector: SteeringVector,
    schedule: InterventionSchedule,
}

impl SteeringHook {
    pub fn vector(&self) -> &SteeringVector {
        &self.vector
    }

    pub fn schedule(&self) -> InterventionSchedule {
        self.schedule
    }
}

impl ResidualHook for SteeringHook {
    fn apply(&self, layer: usize, gen_index: usize, hidden: &mut [f32]) {
        let v = self
            .vector
            .layers
            .get(layer)
            .unwrap_or_else(|| panic!("hook called for layer {layer} of {}", self.vector.n_layers));
        add_scaled_in_place(hidden, v, self.schedule.effective_scale(gen_index));
    }

    fn audit_scale(&self, gen_index: usize) -> Option<f32> {
        Some(self.schedule.effective_scale(gen_index))
    }
}

/// Wrap a normalized steering vector and schedule into a residual hook.
pub fn make_intervention_hook(
    vector: SteeringVector,
    schedule: InterventionSchedule,
) -> Result<SteeringHook, SteeringError> {
    if !vector.normalized {
        return Err(SteeringError::NotNormalized);
    }
    Ok(SteeringHook { vector, schedule })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use crate::tensor::{dot, l2_norm};

    fn tiny() -> Model {
        fixture::build_model(fixture::Preset::Tiny, 42).unwrap()
    }

    fn set(role: PrefixRole, items: &[&str]) -> PrefixSet {
        PrefixSet::new(role, items.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn prefix_set_rejects_empty_dup_blank() {
        assert!(matches!(
            PrefixSet::new(PrefixRole::Compliance, vec![]),
            Err(SteeringError::EmptyPrefixSet)
        ));
        assert!(matches!(
            PrefixSet::new(PrefixRole::Compliance, vec!["a".into(), "a".into()]),
            Err(SteeringError::DuplicatePrefix(_))
        ));
        assert!(matches!(
            PrefixSet::new(PrefixRole::Compliance, vec!["a".into(), "".into()]),
            Err(SteeringError::EmptyPrefix(2))
        ));
    }

    #[test]
    fn prefix_file_parsing_skips_comments_and_blanks() {
        let s = PrefixSet::from_text(PrefixRole::Refusal, "# header\nI cannot\n\n  # note\nNo.\n")
            .unwrap();
        assert_eq!(s.prefixes(), &["I cannot".to_string(), "No.".to_string()]);
    }

    #[test]
    fn content_hash_is_order_sensitive_and_stable() {
        let a = set(PrefixRole::Compliance, &["x", "y"]);
        let b = set(PrefixRole::Compliance, &["y", "x"]);
        assert_eq!(a.content_hash(), a.content_hash());
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn identical_sets_give_zero_vector() {
        let m = tiny();
        let com = set(PrefixRole::Compliance, &["same one", "same two"]);
        let refu = set(PrefixRole::Refusal, &["same one", "same two"]);
        let raw = build_raw_steering(&m, &com, &refu, false).unwrap();
        for v in &raw.layers {
            for &x in v {
                assert!(x.abs() < 1e-6, "{x}");
            }
        }
        assert!(matches!(
            normalize_steering(&raw),
            Err(SteeringError::ZeroSteeringVector(layers)) if layers == vec![0, 1]
        ));
    }

    #[test]
    fn single_pair_is_plain_difference() {
        let m = tiny();
        let com = set(PrefixRole::Compliance, &["Sure, here are the details"]);
        let refu = set(PrefixRole::Refusal, &["I cannot help with that."]);
        let raw = build_raw_steering(&m, &com, &refu, false).unwrap();
        let ch = m.capture_prefix_hiddens("Sure, here are the details", false).unwrap();
        let rh = m.capture_prefix_hiddens("I cannot help with that.", false).unwrap();
        for l in 0..raw.n_layers {
            for ((&s, &c), &r) in raw.layers[l].iter().zip(ch.layer(l)).zip(rh.layer(l)) {
                assert!((s - (c - r)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn swapping_sets_negates_the_vector() {
        let m = tiny();
        let a = set(PrefixRole::Compliance, &["alpha", "beta", "gamma"]);
        let b = set(PrefixRole::Refusal, &["delta", "epsilon"]);
        let fwd = build_raw_steering(&m, &a, &b, false).unwrap();
        let rev = build_raw_steering(&m, &b, &a, false).unwrap();
        for l in 0..fwd.n_layers {
            for (&x, &y) in fwd.layers[l].iter().zip(&rev.layers[l]) {
                assert_eq!(x, -y);
            }
        }
    }

    #[test]
    fn normalize_gives_unit_layers_and_keeps_provenance() {
        let m = tiny();
        let com = set(PrefixRole::Compliance, &["Sure thing", "Here is how"]);
        let refu = set(PrefixRole::Refusal, &["I cannot", "I will not"]);
        let raw = build_raw_steering(&m, &com, &refu, false).unwrap();
        assert!(!raw.normalized);
        let unit = normalize_steering(&raw).unwrap();
        assert!(unit.normalized);
        assert_eq!(unit.provenance, raw.provenance);
        for v in &unit.layers {
            assert!((l2_norm(v) - 1.0).abs() < 1e-6);
        }
        assert!(matches!(
            normalize_steering(&unit),
            Err(SteeringError::AlreadyNormalized)
        ));
    }

    #[test]
    fn normalize_closed_form() {
        let mut v = SteeringVector {
            n_layers: 1,
            d_model: 4,
            normalized: false,
            provenance: Provenance {
                model_id: "m".into(),
                compliance_hash: "c".into(),
                refusal_hash: "r".into(),
                templated: false,
            },
            layers: vec![vec![3.0, 4.0, 0.0, 0.0]],
        };
        let unit = normalize_steering(&v).unwrap();
        assert_eq!(unit.layers[0], vec![0.6, 0.8, 0.0, 0.0]);
        v.layers = vec![vec![0.0; 4]];
        assert!(matches!(
            normalize_steering(&v),
            Err(SteeringError::ZeroSteeringVector(l)) if l == vec![0]
        ));
    }

    #[test]
    fn schedule_boundary() {
        let s = InterventionSchedule::new(5.0, 0.5, 150).unwrap();
        assert_eq!(s.effective_scale(1), 5.0);
        assert_eq!(s.effective_scale(150), 5.0);
        assert_eq!(s.effective_scale(151), 2.5);
        let z = InterventionSchedule::new(0.0, 0.5, 3).unwrap();
        assert_eq!(z.effective_scale(1), 0.0);
        assert_eq!(z.effective_scale(100), 0.0);
        let shallow = InterventionSchedule::new(2.0, 0.0, 3).unwrap();
        assert_eq!(shallow.effective_scale(4), 0.0);
        assert!(InterventionSchedule::new(-1.0, 0.5, 0).is_err());
        assert!(InterventionSchedule::new(f32::NAN, 0.5, 0).is_err());
    }

    #[test]
    fn hook_moves_projection_by_exactly_the_scale() {
        let m = tiny();
        let com = set(PrefixRole::Compliance, &["Sure", "Absolutely", "Yes"]);
        let refu = set(PrefixRole::Refusal, &["No", "Never"]);
        let unit = normalize_steering(&build_raw_steering(&m, &com, &refu, false).unwrap()).unwrap();
        let hook = make_intervention_hook(unit.clone(), InterventionSchedule::new(3.5, 0.2, 2).unwrap())
            .unwrap();
        let mut h: Vec<f32> = (0..16).map(|i| (i as f32 * 0.37).sin()).collect();
        let before = h.clone();
        for (layer, k, want) in [(0usize, 1usize, 3.5f64), (1, 3, 0.7)] {
            h.copy_from_slice(&before);
            hook.apply(layer, k, &mut h);
            let delta: Vec<f32> = h.iter().zip(&before).map(|(a, b)| a - b).collect();
            assert!((dot(&delta, unit.layer(layer)) - want).abs() < 1e-5);
            assert_eq!(hook.audit_scale(k), Some(want as f32));
        }
    }

    #[test]
    fn hook_requires_normalized_vector() {
        let m = tiny();
        let com = set(PrefixRole::Compliance, &["Sure"]);
        let refu = set(PrefixRole::Refusal, &["No"]);
        let raw = build_raw_steering(&m, &com, &refu, false).unwrap();
        assert!(matches!(
            make_intervention_hook(raw, InterventionSchedule::new(1.0, 1.0, 0).unwrap()),
            Err(SteeringError::NotNormalized)
        ));
    }

    #[test]
    fn vector_round_trips_through_json_file() {
        let m = tiny();
        let com = set(PrefixRole::Compliance, &["Sure, here are the details"]);
        let refu = set(PrefixRole::Refusal, &["I cannot help with that."]);
        let unit = normalize_steering(&build_raw_steering(&m, &com, &refu, false).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("steer.json");
        unit.save(&path).unwrap();
        let back = SteeringVector::load(&path).unwrap();
        assert_eq!(back.provenance, unit.provenance);
        assert_eq!(back.layers, unit.layers);
        assert!(back.normalized);
        back.check_against(&m, false).unwrap();
    }

    #[test]
    fn check_against_detects_mismatches() {
        let m = tiny();
        let other = fixture::build_model(fixture::Preset::Tiny, 43).unwrap();
        let com = set(PrefixRole::Compliance, &["Sure"]);
        let refu = set(PrefixRole::Refusal, &["No"]);
        let unit = normalize_steering(&build_raw_steering(&m, &com, &refu, false).unwrap()).unwrap();
        assert!(unit.check_against(&other, false).is_err());
        unit.check_against(&other, true).unwrap(); // downgraded to warning
        let mut short = unit.clone();
        short.layers.pop();
        short.n_layers -= 1;
        assert!(matches!(
            short.check_against(&m, true),
            Err(SteeringError::LayerMismatch { vector: 1, model: 2 })
        ));
    }

    #[test]
    fn archive_export_has_one_tensor_per_layer() {
        let m = tiny();
        let com = set(PrefixRole::Compliance, &["Sure"]);
        let refu = set(PrefixRole::Refusal, &["No"]);
        let unit = normalize_steering(&build_raw_steering(&m, &com, &refu, false).unwrap()).unwrap();
        let a = unit.to_archive();
        assert_eq!(a.len(), 2);
        assert_eq!(a.get("steering.layers.0").unwrap().shape(), &[16]);
    }
}
