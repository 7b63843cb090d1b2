//! Attack orchestration: configuration, per-prompt work items, worker pool,
//! resumable results files, and hyperparameter sweeps.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decoding::{generate, DecodingError, FinishReason, GenerationParams};
use crate::experiment::dataset::{load_prompts, DatasetError, DatasetFormat, PromptRecord};
use crate::metrics::{
    d2g, judge_keyword, judge_remote, ppl_self, JudgeConfig, JudgeMode, MetricsError, Verdict,
};
use crate::model::runtime::{Model, ResidualHook, RuntimeError};
use crate::steering::{
    build_raw_steering, make_intervention_hook, normalize_steering, InterventionSchedule,
    PrefixRole, PrefixSet, SteeringError, SteeringVector,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("experiment io: {0}")]
    Io(#[from] std::io::Error),
    #[error("results serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Steering(#[from] SteeringError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Decoding(#[from] DecodingError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("sweep csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad experiment config: {0}")]
    BadConfig(String),
}

pub const RESULTS_SCHEMA: &str = "steerlab.results.v1";

// ----------------------------------------------------------------------------
// configuration

/// Which generation conditions to run per prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionSpec {
    Attack,
    Direct,
    Both,
}

impl ConditionSpec {
    fn conditions(self) -> &'static [Condition] {
        match self {
            ConditionSpec::Attack => &[Condition::Attack],
            ConditionSpec::Direct => &[Condition::Direct],
            ConditionSpec::Both => &[Condition::Attack, Condition::Direct],
        }
    }
}

/// The condition one record was generated under: steering hook installed
/// (attack) or plain generation (direct).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Attack,
    Direct,
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Condition::Attack => write!(f, "attack"),
            Condition::Direct => write!(f, "direct"),
        }
    }
}

fn default_alphas() -> Vec<f32> {
    vec![5.0]
}

fn default_betas() -> Vec<f32> {
    vec![0.5]
}

fn default_taus() -> Vec<usize> {
    vec![150]
}

fn default_csv_column() -> String {
    "goal".into()
}

fn default_workers() -> usize {
    1
}

fn default_repeats() -> usize {
    1
}

fn default_condition() -> ConditionSpec {
    ConditionSpec::Attack
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model_dir: PathBuf,
    /// Steering-vector source: either a prebuilt vector file, or the two
    /// prefix files to build one from.
    #[serde(default)]
    pub vector_file: Option<PathBuf>,
    #[serde(default)]
    pub compliance_file: Option<PathBuf>,
    #[serde(default)]
    pub refusal_file: Option<PathBuf>,
    /// Frame prefixes as assistant turns when capturing hidden states.
    #[serde(default)]
    pub templated_capture: bool,
    /// Schedule grids; a plain attack run needs singletons.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f32>,
    #[serde(default = "default_betas")]
    pub betas: Vec<f32>,
    #[serde(default = "default_taus")]
    pub taus: Vec<usize>,
    #[serde(default)]
    pub generation: GenerationParams,
    pub datasets: Vec<PathBuf>,
    #[serde(default = "default_csv_column")]
    pub csv_column: String,
    #[serde(default)]
    pub judge: JudgeConfig,
    /// Results file for attack runs; directory for sweeps.
    pub out_path: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Defaults to a fingerprint of the semantic config fields.
    #[serde(default)]
    pub run_id: Option<String>,
    #[serde(default = "default_condition")]
    pub condition: ConditionSpec,
    /// Sampled generations per (prompt, condition).
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Permit using a steering vector built on a different model id.
    #[serde(default)]
    pub allow_model_mismatch: bool,
}

impl Default for ExperimentConfig {
    /// Reference schedule and generation settings with empty paths; the
    /// paths must be filled in before the config validates.
    fn default() -> Self {
        Self {
            model_dir: PathBuf::new(),
            vector_file: None,
            compliance_file: None,
            refusal_file: None,
            templated_capture: false,
            alphas: default_alphas(),
            betas: default_betas(),
            taus: default_taus(),
            generation: GenerationParams::default(),
            datasets: Vec::new(),
            csv_column: default_csv_column(),
            judge: JudgeConfig::default(),
            out_path: PathBuf::new(),
            workers: default_workers(),
            run_id: None,
            condition: default_condition(),
            repeats: default_repeats(),
            allow_model_mismatch: false,
        }
    }
}

impl ExperimentConfig {
    /// Hash of the semantic fields only. Workers, output path, and an
    /// explicit run id do not change what is computed, so they are excluded;
    /// this keeps run ids stable across resumes and worker counts.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("workers");
            map.remove("out_path");
            map.remove("run_id");
        }
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(&Sha256::digest(canonical.as_bytes())[..6])
    }

    pub fn effective_run_id(&self) -> String {
        self.run_id.clone().unwrap_or_else(|| self.fingerprint())
    }

    fn validate_common(&self) -> Result<(), ExperimentError> {
        if self.datasets.is_empty() {
            return Err(ExperimentError::BadConfig("no datasets given".into()));
        }
        if self.alphas.is_empty() || self.betas.is_empty() || self.taus.is_empty() {
            return Err(ExperimentError::BadConfig(
                "alpha/beta/tau grids must be nonempty".into(),
            ));
        }
        if self.workers == 0 {
            return Err(ExperimentError::BadConfig("workers must be at least 1".into()));
        }
        if self.repeats == 0 {
            return Err(ExperimentError::BadConfig("repeats must be at least 1".into()));
        }
        self.generation.validate().map_err(ExperimentError::from)?;
        self.judge.validate().map_err(ExperimentError::from)?;
        let needs_vector = matches!(self.condition, ConditionSpec::Attack | ConditionSpec::Both);
        let has_source = self.vector_file.is_some()
            || (self.compliance_file.is_some() && self.refusal_file.is_some());
        if needs_vector && !has_source {
            return Err(ExperimentError::BadConfig(
                "attack condition needs vector_file, or compliance_file and refusal_file".into(),
            ));
        }
        Ok(())
    }

    fn validate_single_point(&self) -> Result<InterventionSchedule, ExperimentError> {
        self.validate_common()?;
        if self.alphas.len() != 1 || self.betas.len() != 1 || self.taus.len() != 1 {
            return Err(ExperimentError::BadConfig(format!(
                "attack runs need exactly one (alpha, beta, tau); got {}x{}x{} grid points (use a sweep)",
                self.alphas.len(),
                self.betas.len(),
                self.taus.len()
            )));
        }
        InterventionSchedule::new(self.alphas[0], self.betas[0], self.taus[0])
            .map_err(ExperimentError::from)
    }
}

// ----------------------------------------------------------------------------
// result records

/// One line of the results file: a single generated, judged, and scored
/// response. `verdict` and `judge_error` are mutually exclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub run_id: String,
    pub dataset: String,
    pub prompt_id: String,
    /// Prompt text, carried so results can be re-judged without the dataset.
    pub prompt: String,
    pub condition: Condition,
    pub repeat: usize,
    pub alpha: f32,
    pub beta: f32,
    pub tau: usize,
    pub seed: u64,
    pub response: String,
    pub token_count: usize,
    pub finish_reason: FinishReason,
    pub truncated_by_context: bool,
    pub verdict: Option<Verdict>,
    pub judge_error: Option<String>,
    /// Self-evaluated perplexity; absent when scoring failed (reason logged).
    pub ppl: Option<f64>,
    pub d2g: f64,
    pub wall_time_ms: u64,
    pub model_id: String,
    pub config_hash: String,
    /// Hash of the steering vector used; absent for the direct condition.
    pub vector_sha: Option<String>,
}

impl AttackRecord {
    /// Sort/dedup key within one run.
    pub fn key(&self) -> (String, String, Condition, usize) {
        (
            self.dataset.clone(),
            self.prompt_id.clone(),
            self.condition,
            self.repeat,
        )
    }

    pub fn is_flagged(&self) -> bool {
        self.verdict.is_none()
    }

    pub fn score(&self) -> Option<f64> {
        self.verdict.as_ref().map(Verdict::score)
    }
}

/// Parse a results file: skips the schema header line(s), returns records.
pub fn read_results(path: &Path) -> Result<Vec<AttackRecord>, ExperimentError> {
    let mut records = Vec::new();
    for line in fs::read_to_string(path)?.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)?;
        if value.get("schema").is_some() {
            continue;
        }
        records.push(serde_json::from_value(value)?);
    }
    Ok(records)
}

// ----------------------------------------------------------------------------
// steering-vector resolution

fn vector_sha(vector: &SteeringVector) -> String {
    let canonical = serde_json::to_string(vector).expect("vector serializes");
    hex::encode(&Sha256::digest(canonical.as_bytes())[..8])
}

/// Load or build the normalized steering vector for this config. Built
/// vectors are cached next to the output path, keyed by model id, prefix-set
/// hashes, and the templated flag, so sweep points reuse one build.
fn resolve_vector(
    config: &ExperimentConfig,
    model: &Model,
) -> Result<SteeringVector, ExperimentError> {
    if let Some(path) = &config.vector_file {
        let vector = SteeringVector::load(path)?;
        if !vector.normalized {
            return Err(ExperimentError::BadConfig(format!(
                "steering vector {} is not normalized",
                path.display()
            )));
        }
        vector.check_against(model, config.allow_model_mismatch)?;
        return Ok(vector);
    }
    let com_path = config.compliance_file.as_ref().expect("validated");
    let ref_path = config.refusal_file.as_ref().expect("validated");
    let compliance = PrefixSet::from_file(PrefixRole::Compliance, com_path)?;
    let refusal = PrefixSet::from_file(PrefixRole::Refusal, ref_path)?;

    let cache_dir = config
        .out_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let cache_name = format!(
        "vector-{}-{}{}-{}.json",
        model.model_id(),
        &compliance.content_hash()[..8],
        &refusal.content_hash()[..8],
        if config.templated_capture { "t" } else { "u" },
    );
    let cache_path = cache_dir.join(cache_name);
    if cache_path.exists() {
        let vector = SteeringVector::load(&cache_path)?;
        if vector.normalized
            && vector.provenance.model_id == model.model_id()
            && vector.provenance.compliance_hash == compliance.content_hash()
            && vector.provenance.refusal_hash == refusal.content_hash()
            && vector.provenance.templated == config.templated_capture
        {
            log::info!("reusing cached steering vector {}", cache_path.display());
            return Ok(vector);
        }
        log::warn!(
            "cached vector {} does not match this configuration; rebuilding",
            cache_path.display()
        );
    }
    let raw = build_raw_steering(model, &compliance, &refusal, config.templated_capture)?;
    let vector = normalize_steering(&raw)?;
    fs::create_dir_all(&cache_dir)?;
    vector.save(&cache_path)?;
    Ok(vector)
}

// ----------------------------------------------------------------------------
// attack runs

struct WorkItem {
    global_index: usize,
    prompt: PromptRecord,
    condition: Condition,
    repeat: usize,
}

fn seed_for(base: u64, prompt_index: usize, repeat: usize) -> u64 {
    let mut seed = base ^ prompt_index as u64;
    if repeat > 0 {
        seed ^= (repeat as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    }
    seed
}

/// Load every configured dataset, in order, checking `(dataset, id)`
/// uniqueness across the whole corpus. The position in this combined list is
/// the prompt index that seeds generation.
pub fn load_all_prompts(config: &ExperimentConfig) -> Result<Vec<PromptRecord>, ExperimentError> {
    let mut prompts = Vec::new();
    let mut seen = HashSet::new();
    for path in &config.datasets {
        let format = DatasetFormat::from_path(path)?;
        for record in load_prompts(path, format, &config.csv_column)? {
            if !seen.insert((record.dataset.clone(), record.id.clone())) {
                return Err(ExperimentError::Dataset(DatasetError::DuplicateId {
                    dataset: record.dataset,
                    id: record.id,
                }));
            }
            prompts.push(record);
        }
    }
    Ok(prompts)
}

/// Run one (alpha, beta, tau) point over all datasets and conditions,
/// appending to a line-delimited JSON results file. Already-present records
/// for this run id are skipped, so interrupted runs resume cleanly.
pub fn run_attack(config: &ExperimentConfig) -> Result<PathBuf, ExperimentError> {
    let schedule = config.validate_single_point()?;
    let model = Model::load(&config.model_dir)?;
    let run_id = config.effective_run_id();
    let config_hash = config.fingerprint();

    let needs_vector = matches!(config.condition, ConditionSpec::Attack | ConditionSpec::Both);
    let (hook, vec_sha) = if needs_vector {
        let vector = resolve_vector(config, &model)?;
        vector.check_against(&model, config.allow_model_mismatch)?;
        let sha = vector_sha(&vector);
        (Some(make_intervention_hook(vector, schedule)?), Some(sha))
    } else {
        (None, None)
    };

    let prompts = load_all_prompts(config)?;

    // resume: collect keys already recorded under this run id
    let mut done: HashSet<(String, String, Condition, usize)> = HashSet::new();
    let mut needs_header = true;
    if config.out_path.exists() {
        let existing = read_results(&config.out_path)?;
        needs_header = existing.is_empty()
            && fs::metadata(&config.out_path).map(|m| m.len() == 0).unwrap_or(true);
        for r in existing.iter().filter(|r| r.run_id == run_id) {
            done.insert(r.key());
        }
    }
    if let Some(parent) = config.out_path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }

    let items: Vec<WorkItem> = prompts
        .iter()
        .enumerate()
        .flat_map(|(global_index, prompt)| {
            config.condition.conditions().iter().flat_map(move |&condition| {
                (0..config.repeats).map(move |repeat| WorkItem {
                    global_index,
                    prompt: prompt.clone(),
                    condition,
                    repeat,
                })
            })
        })
        .filter(|item| {
            !done.contains(&(
                item.prompt.dataset.clone(),
                item.prompt.id.clone(),
                item.condition,
                item.repeat,
            ))
        })
        .collect();

    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&config.out_path)?;
    let mut writer = BufWriter::new(file);
    if needs_header {
        let header = serde_json::json!({
            "schema": RESULTS_SCHEMA,
            "run_id": run_id,
            "model_id": model.model_id(),
            "config_hash": config_hash,
        });
        writeln!(writer, "{header}")?;
        writer.flush()?;
    }
    let writer = Mutex::new(writer);

    log::info!(
        "run {run_id}: {} item(s) to process on {} worker(s)",
        items.len(),
        config.workers
    );
    let cursor = AtomicUsize::new(0);
    let first_error: Mutex<Option<ExperimentError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..config.workers.min(items.len().max(1)) {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() || first_error.lock().unwrap().is_some() {
                    break;
                }
                let item = &items[i];
                match process_item(
                    &model,
                    config,
                    schedule,
                    hook.as_ref().map(|h| h as &dyn ResidualHook),
                    vec_sha.as_deref(),
                    &run_id,
                    &config_hash,
                    item,
                ) {
                    Ok(record) => {
                        let line =
                            serde_json::to_string(&record).expect("record serializes");
                        let mut w = writer.lock().unwrap();
                        if let Err(e) = writeln!(w, "{line}").and_then(|_| w.flush()) {
                            first_error.lock().unwrap().get_or_insert(e.into());
                        }
                    }
                    Err(e) => {
                        first_error.lock().unwrap().get_or_insert(e);
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    Ok(config.out_path.clone())
}

/// Generate, judge, and score one work item. Judge failures flag the record
/// instead of failing the run; generation failures abort.
#[allow(clippy::too_many_arguments)]
fn process_item(
    model: &Model,
    config: &ExperimentConfig,
    schedule: InterventionSchedule,
    hook: Option<&dyn ResidualHook>,
    vec_sha: Option<&str>,
    run_id: &str,
    config_hash: &str,
    item: &WorkItem,
) -> Result<AttackRecord, ExperimentError> {
    let started = Instant::now();
    let seed = seed_for(config.generation.seed, item.global_index, item.repeat);
    let params = GenerationParams {
        seed,
        ..config.generation.clone()
    };
    let (item_hook, item_vec_sha) = match item.condition {
        Condition::Attack => (hook, vec_sha),
        Condition::Direct => (None, None),
    };
    let output = generate(model, &item.prompt.text, &params, item_hook)?;

    let (verdict, judge_error) = match config.judge.mode {
        JudgeMode::Keyword => (Some(judge_keyword(&output.text, &config.judge)), None),
        JudgeMode::Remote => match judge_remote(&item.prompt.text, &output.text, &config.judge) {
            Ok(v) => (Some(v), None),
            Err(e @ (MetricsError::JudgeUnavailable { .. } | MetricsError::JudgeParseError { .. })) => {
                log::warn!(
                    "judge failed for {}/{} ({}): {e}",
                    item.prompt.dataset,
                    item.prompt.id,
                    item.condition
                );
                (None, Some(e.to_string()))
            }
            Err(e) => return Err(e.into()),
        },
    };

    let ppl = match ppl_self(model, &item.prompt.text, &output.ids) {
        Ok(p) => Some(p),
        Err(e) => {
            log::warn!(
                "perplexity scoring failed for {}/{} ({}): {e}",
                item.prompt.dataset,
                item.prompt.id,
                item.condition
            );
            None
        }
    };

    Ok(AttackRecord {
        run_id: run_id.to_string(),
        dataset: item.prompt.dataset.clone(),
        prompt_id: item.prompt.id.clone(),
        prompt: item.prompt.text.clone(),
        condition: item.condition,
        repeat: item.repeat,
        alpha: schedule.alpha,
        beta: schedule.beta,
        tau: schedule.tau,
        seed,
        d2g: d2g(&output.text),
        token_count: output.ids.len(),
        finish_reason: output.finish_reason,
        truncated_by_context: output.truncated_by_context,
        response: output.text,
        verdict,
        judge_error,
        ppl,
        wall_time_ms: started.elapsed().as_millis() as u64,
        model_id: model.model_id().to_string(),
        config_hash: config_hash.to_string(),
        vector_sha: item_vec_sha.map(str::to_string),
    })
}

// ----------------------------------------------------------------------------
// sweeps

/// Sweep CSV columns, in order.
pub const SWEEP_COLUMNS: [&str; 8] = [
    "alpha", "beta", "tau", "asr", "mean_d2g", "mean_ppl", "n", "errors",
];

/// Run the full Cartesian product of the alpha/beta/tau grids, one attack
/// run per point, all sharing the cached steering vector. Returns the path
/// of the summary CSV inside `out_path` (treated as a directory). Failed
/// points leave blank metric cells and the sweep continues.
pub fn run_sweep(config: &ExperimentConfig) -> Result<PathBuf, ExperimentError> {
    config.validate_common()?;
    fs::create_dir_all(&config.out_path)?;
    let csv_path = config.out_path.join("sweep.csv");
    let mut writer = csv::Writer::from_path(&csv_path)?;
    writer.write_record(SWEEP_COLUMNS)?;

    for &alpha in &config.alphas {
        for &beta in &config.betas {
            for &tau in &config.taus {
                let mut point = config.clone();
                point.alphas = vec![alpha];
                point.betas = vec![beta];
                point.taus = vec![tau];
                point.condition = ConditionSpec::Attack;
                point.run_id = None;
                point.out_path = config
                    .out_path
                    .join(format!("point-a{alpha}-b{beta}-t{tau}.jsonl"));
                let summary = run_attack(&point).and_then(|path| summarize_results(&path));
                match summary {
                    Ok(s) => {
                        writer.write_record([
                            alpha.to_string(),
                            beta.to_string(),
                            tau.to_string(),
                            s.asr.map(|v| format!("{v:.6}")).unwrap_or_default(),
                            s.mean_d2g.map(|v| format!("{v:.6}")).unwrap_or_default(),
                            s.mean_ppl.map(|v| format!("{v:.6}")).unwrap_or_default(),
                            s.n.to_string(),
                            s.errors.to_string(),
                        ])?;
                    }
                    Err(e) => {
                        log::error!("sweep point (α={alpha}, β={beta}, τ={tau}) failed: {e}");
                        writer.write_record([
                            alpha.to_string(),
                            beta.to_string(),
                            tau.to_string(),
                            String::new(),
                            String::new(),
                            String::new(),
                            "0".into(),
                            "0".into(),
                        ])?;
                    }
                }
                writer.flush()?;
            }
        }
    }
    Ok(csv_path)
}

/// Point summary over one results file: means over unflagged records.
pub struct ResultsSummary {
    pub asr: Option<f64>,
    pub mean_d2g: Option<f64>,
    pub mean_ppl: Option<f64>,
    pub n: usize,
    pub errors: usize,
}

pub fn summarize_results(path: &Path) -> Result<ResultsSummary, ExperimentError> {
    let records = read_results(path)?;
    let n = records.len();
    let errors = records.iter().filter(|r| r.is_flagged()).count();
    let scored: Vec<&AttackRecord> = records.iter().filter(|r| !r.is_flagged()).collect();
    let mean = |values: Vec<f64>| {
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };
    Ok(ResultsSummary {
        asr: mean(scored.iter().filter_map(|r| r.score()).collect()),
        mean_d2g: mean(scored.iter().map(|r| r.d2g).collect()),
        mean_ppl: mean(scored.iter().filter_map(|r| r.ppl).collect()),
        n,
        errors,
    })
}

// ----------------------------------------------------------------------------
// re-scoring

/// Re-judge existing records with a possibly different judge, in place.
/// Responses are never regenerated; only `verdict` and `judge_error` change,
/// so previously flagged records can recover a verdict.
pub fn rescore(records: &mut [AttackRecord], judge: &JudgeConfig) -> Result<(), ExperimentError> {
    judge.validate()?;
    for record in records {
        match judge.mode {
            JudgeMode::Keyword => {
                record.verdict = Some(judge_keyword(&record.response, judge));
                record.judge_error = None;
            }
            JudgeMode::Remote => match judge_remote(&record.prompt, &record.response, judge) {
                Ok(v) => {
                    record.verdict = Some(v);
                    record.judge_error = None;
                }
                Err(
                    e @ (MetricsError::JudgeUnavailable { .. }
                    | MetricsError::JudgeParseError { .. }),
                ) => {
                    record.verdict = None;
                    record.judge_error = Some(e.to_string());
                }
                Err(e) => return Err(e.into()),
            },
        }
    }
    Ok(())
}
