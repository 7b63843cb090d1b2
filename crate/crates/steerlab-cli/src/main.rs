//! Batch driver for the activation-steering laboratory.
//!
//! Every subcommand is non-interactive: data goes to stdout, logs go to
//! stderr, and the process exits 0 on success, 1 on usage errors, and 2 on
//! runtime failures.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use steerlab::decoding::{generate, GenerationParams};
use steerlab::experiment::{
    aggregate, read_results, render_markdown, rescore, run_attack, run_sweep, summarize_results,
    write_csv, AttackRecord, ConditionSpec, ExperimentConfig, RESULTS_SCHEMA,
};
use steerlab::fixture::{export_model_dir, Preset};
use steerlab::metrics::{JudgeConfig, JudgeMode};
use steerlab::model::runtime::{Model, ResidualHook};
use steerlab::steering::{
    build_raw_steering, make_intervention_hook, normalize_steering, InterventionSchedule,
    PrefixRole, PrefixSet, SteeringVector,
};
use steerlab::tensor::l2_norm;

// ----------------------------------------------------------------------------
// argument surface

#[derive(Parser)]
#[command(
    name = "steerlab",
    version,
    about = "Activation-steering laboratory: build steering vectors, run steered \
             generation attacks, and score the results",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log at debug level.
    #[arg(long, global = true, conflicts_with = "quiet")]
    verbose: bool,
    /// Log only errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a small seeded model (config, weights, tokenizer) to a directory.
    ExportFixture(ExportFixtureArgs),
    /// Build a normalized steering vector from compliance/refusal prefix files.
    BuildVectors(BuildVectorsArgs),
    /// Generate one completion, optionally steered.
    Generate(GenerateArgs),
    /// Run steered generation over prompt datasets, writing a results file.
    Attack(AttackArgs),
    /// Run one attack per point of the alpha/beta/tau grids.
    Sweep(SweepArgs),
    /// Re-judge an existing results file without regenerating responses.
    Eval(EvalArgs),
    /// Aggregate results files into per-dataset summary tables.
    Report(ReportArgs),
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    Preset::parse(s).ok_or_else(|| format!("unknown preset '{s}' (expected tiny or tiny-gpt2)"))
}

fn parse_judge_mode(s: &str) -> Result<JudgeMode, String> {
    match s {
        "keyword" => Ok(JudgeMode::Keyword),
        "remote" => Ok(JudgeMode::Remote),
        _ => Err(format!("unknown judge mode '{s}' (expected keyword or remote)")),
    }
}

#[derive(Args)]
struct ExportFixtureArgs {
    /// Directory to write the model files into.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// RNG seed for the weights; the same seed always gives the same bytes.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Model shape: "tiny" or "tiny-gpt2".
    #[arg(long, default_value = "tiny", value_parser = parse_preset)]
    preset: Preset,
}

#[derive(Args)]
struct BuildVectorsArgs {
    /// Model directory.
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    /// Compliance prefix file (one prefix per line, '#' comments).
    #[arg(long, value_name = "FILE")]
    com: PathBuf,
    /// Refusal prefix file.
    #[arg(long = "ref", value_name = "FILE")]
    refusal: PathBuf,
    /// Frame prefixes as assistant turns during hidden-state capture.
    #[arg(long)]
    templated: bool,
    /// Output steering-vector file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

/// Sampling flags shared by generation-driving subcommands. Unset flags
/// leave the config-file or built-in defaults untouched.
#[derive(Args)]
struct GenFlags {
    #[arg(long)]
    temperature: Option<f32>,
    #[arg(long)]
    top_p: Option<f32>,
    /// 0 disables top-k filtering.
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    repetition_penalty: Option<f32>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// Base seed; per-prompt seeds are derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Take the argmax token instead of sampling.
    #[arg(long)]
    greedy: bool,
    /// Keep generating after an end-of-sequence token.
    #[arg(long)]
    no_stop_on_eos: bool,
}

impl GenFlags {
    fn apply(&self, params: &mut GenerationParams) {
        if let Some(v) = self.temperature {
            params.temperature = v;
        }
        if let Some(v) = self.top_p {
            params.top_p = v;
        }
        if let Some(v) = self.top_k {
            params.top_k = v;
        }
        if let Some(v) = self.repetition_penalty {
            params.repetition_penalty = v;
        }
        if let Some(v) = self.max_new_tokens {
            params.max_new_tokens = v;
        }
        if let Some(v) = self.seed {
            params.seed = v;
        }
        if self.greedy {
            params.greedy = true;
        }
        if self.no_stop_on_eos {
            params.stop_on_eos = false;
        }
    }
}

/// Judge flags shared by scoring subcommands.
#[derive(Args)]
struct JudgeFlags {
    /// "keyword" (offline substring matching) or "remote" (chat endpoint).
    #[arg(long, value_parser = parse_judge_mode)]
    judge: Option<JudgeMode>,
    /// Chat-completions endpoint URL for the remote judge.
    #[arg(long, value_name = "URL")]
    judge_url: Option<String>,
    /// Model name sent to the remote judge.
    #[arg(long, value_name = "NAME")]
    judge_model: Option<String>,
    /// Environment variable holding the judge API key.
    #[arg(long, value_name = "VAR")]
    judge_key_env: Option<String>,
    #[arg(long, value_name = "MS")]
    judge_timeout_ms: Option<u64>,
    #[arg(long, value_name = "N")]
    judge_retries: Option<u32>,
    /// File of refusal keywords overriding the built-in list.
    #[arg(long, value_name = "FILE")]
    keywords_file: Option<PathBuf>,
}

impl JudgeFlags {
    fn apply(&self, judge: &mut JudgeConfig) -> Result<(), CliError> {
        if let Some(mode) = self.judge {
            judge.mode = mode;
        }
        if let Some(url) = &self.judge_url {
            judge.endpoint_url = Some(url.clone());
        }
        if let Some(name) = &self.judge_model {
            judge.judge_model_name = name.clone();
        }
        if let Some(var) = &self.judge_key_env {
            judge.api_key_env_var = Some(var.clone());
        }
        if let Some(ms) = self.judge_timeout_ms {
            judge.request_timeout_ms = ms;
        }
        if let Some(n) = self.judge_retries {
            judge.max_retries = n;
        }
        if let Some(path) = &self.keywords_file {
            let text = fs::read_to_string(path).map_err(runtime)?;
            let keywords: Vec<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect();
            if keywords.is_empty() {
                return Err(CliError::Usage(format!(
                    "keywords file {} has no keywords",
                    path.display()
                )));
            }
            judge.refusal_keywords = keywords;
        }
        Ok(())
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Model directory.
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    /// The user prompt (wrapped in the model's chat template).
    #[arg(long)]
    prompt: String,
    /// Steering-vector file; omit for plain generation.
    #[arg(long, value_name = "FILE")]
    vectors: Option<PathBuf>,
    /// Steering strength for the first tau generated tokens.
    #[arg(long, default_value_t = 5.0)]
    alpha: f32,
    /// Strength multiplier after tau.
    #[arg(long, default_value_t = 0.5)]
    beta: f32,
    /// Boundary between full- and damped-strength phases.
    #[arg(long, default_value_t = 150)]
    tau: usize,
    /// Use the vector even if it was built on a different model.
    #[arg(long)]
    force: bool,
    #[command(flatten)]
    gen: GenFlags,
}

/// Flags shared by attack and sweep. A config file, when given, supplies the
/// base settings; explicit flags override it field by field.
#[derive(Args)]
struct RunArgs {
    /// JSON or TOML experiment config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Model directory.
    #[arg(long, value_name = "DIR")]
    model: Option<PathBuf>,
    /// Prompt dataset file (.csv, .jsonl, or .txt); repeatable.
    #[arg(long = "prompts", value_name = "FILE")]
    prompts: Vec<PathBuf>,
    /// Prebuilt steering-vector file.
    #[arg(long, value_name = "FILE")]
    vectors: Option<PathBuf>,
    /// Compliance prefix file (to build a vector in place of --vectors).
    #[arg(long, value_name = "FILE")]
    com: Option<PathBuf>,
    /// Refusal prefix file.
    #[arg(long = "ref", value_name = "FILE")]
    refusal: Option<PathBuf>,
    /// Frame prefixes as assistant turns during hidden-state capture.
    #[arg(long)]
    templated: bool,
    /// CSV column holding the prompt text.
    #[arg(long, value_name = "NAME")]
    csv_column: Option<String>,
    /// Use a vector built on a different model anyway.
    #[arg(long)]
    force: bool,
    /// Parallel generation workers.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Sampled generations per (prompt, condition).
    #[arg(long, value_name = "N")]
    repeats: Option<usize>,
    /// Run identifier; defaults to a fingerprint of the settings.
    #[arg(long, value_name = "ID")]
    run_id: Option<String>,
    #[command(flatten)]
    gen: GenFlags,
    #[command(flatten)]
    judge: JudgeFlags,
}

impl RunArgs {
    fn build_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => load_config_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(model) = &self.model {
            cfg.model_dir = model.clone();
        }
        if !self.prompts.is_empty() {
            cfg.datasets = self.prompts.clone();
        }
        if let Some(v) = &self.vectors {
            cfg.vector_file = Some(v.clone());
        }
        if let Some(c) = &self.com {
            cfg.compliance_file = Some(c.clone());
        }
        if let Some(r) = &self.refusal {
            cfg.refusal_file = Some(r.clone());
        }
        if self.templated {
            cfg.templated_capture = true;
        }
        if let Some(col) = &self.csv_column {
            cfg.csv_column = col.clone();
        }
        if self.force {
            cfg.allow_model_mismatch = true;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(r) = self.repeats {
            cfg.repeats = r;
        }
        if let Some(id) = &self.run_id {
            cfg.run_id = Some(id.clone());
        }
        self.gen.apply(&mut cfg.generation);
        self.judge.apply(&mut cfg.judge)?;
        if cfg.model_dir.as_os_str().is_empty() {
            return Err(CliError::Usage("--model (or a config file) is required".into()));
        }
        if cfg.datasets.is_empty() {
            return Err(CliError::Usage("--prompts (or a config file) is required".into()));
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Results file (line-delimited JSON); appended to on resume.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Steering strength for the first tau generated tokens.
    #[arg(long)]
    alpha: Option<f32>,
    /// Strength multiplier after tau.
    #[arg(long)]
    beta: Option<f32>,
    /// Boundary between full- and damped-strength phases.
    #[arg(long)]
    tau: Option<usize>,
    /// Generate without the steering hook instead.
    #[arg(long, conflicts_with = "both")]
    direct: bool,
    /// Generate each prompt both steered and unsteered.
    #[arg(long)]
    both: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Output directory for per-point results files and the summary CSV.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated alpha grid.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    alphas: Vec<f32>,
    /// Comma-separated beta grid.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    betas: Vec<f32>,
    /// Comma-separated tau grid.
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    taus: Vec<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Results file to re-judge.
    #[arg(long, value_name = "FILE")]
    results: PathBuf,
    /// Where to write the re-judged results file.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[command(flatten)]
    judge: JudgeFlags,
}

#[derive(Args)]
struct ReportArgs {
    /// Results file; repeatable, records are pooled.
    #[arg(long = "results", value_name = "FILE", required = true)]
    results: Vec<PathBuf>,
    /// Also write the table as markdown to this file.
    #[arg(long, value_name = "FILE")]
    out_md: Option<PathBuf>,
    /// Also write the table as CSV to this file.
    #[arg(long, value_name = "FILE")]
    out_csv: Option<PathBuf>,
}

// ----------------------------------------------------------------------------
// error-to-exit-code mapping

enum CliError {
    /// Bad invocation: exit 1.
    Usage(String),
    /// Valid invocation that failed: exit 2.
    Runtime(anyhow::Error),
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Runtime(e.into())
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.quiet {
        "error"
    } else if cli.verbose {
        "debug"
    } else {
        "info"
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::ExportFixture(args) => cmd_export_fixture(&args),
        Command::BuildVectors(args) => cmd_build_vectors(&args),
        Command::Generate(args) => cmd_generate(&args),
        Command::Attack(args) => cmd_attack(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Report(args) => cmd_report(&args),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

// ----------------------------------------------------------------------------
// subcommands

fn cmd_export_fixture(args: &ExportFixtureArgs) -> Result<(), CliError> {
    export_model_dir(args.preset, args.seed, &args.out).map_err(runtime)?;
    log::info!(
        "wrote {} fixture (seed {}) to {}",
        args.preset.name(),
        args.seed,
        args.out.display()
    );
    println!("{}", args.out.display());
    Ok(())
}

fn cmd_build_vectors(args: &BuildVectorsArgs) -> Result<(), CliError> {
    let model = Model::load(&args.model).map_err(runtime)?;
    let compliance =
        PrefixSet::from_file(PrefixRole::Compliance, &args.com).map_err(runtime)?;
    let refusal = PrefixSet::from_file(PrefixRole::Refusal, &args.refusal).map_err(runtime)?;
    let raw =
        build_raw_steering(&model, &compliance, &refusal, args.templated).map_err(runtime)?;
    for (i, layer) in raw.layers.iter().enumerate() {
        println!("layer {i} pre-normalization norm {:.6}", l2_norm(layer));
    }
    let vector = normalize_steering(&raw).map_err(runtime)?;
    vector.save(&args.out).map_err(runtime)?;
    log::info!(
        "wrote steering vector for model {} to {}",
        model.model_id(),
        args.out.display()
    );
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let model = Model::load(&args.model).map_err(runtime)?;
    let hook = match &args.vectors {
        Some(path) => {
            let vector = SteeringVector::load(path).map_err(runtime)?;
            vector.check_against(&model, args.force).map_err(runtime)?;
            let schedule = InterventionSchedule::new(args.alpha, args.beta, args.tau)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            Some(make_intervention_hook(vector, schedule).map_err(runtime)?)
        }
        None => None,
    };
    let mut params = GenerationParams::default();
    args.gen.apply(&mut params);
    params
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let output = generate(
        &model,
        &args.prompt,
        &params,
        hook.as_ref().map(|h| h as &dyn ResidualHook),
    )
    .map_err(runtime)?;
    log::info!(
        "generated {} token(s), finish reason {:?}",
        output.ids.len(),
        output.finish_reason
    );
    println!("{}", output.text);
    Ok(())
}

fn check_grid(name: &str, values: &[f32]) -> Result<(), CliError> {
    for &v in values {
        if !v.is_finite() || v < 0.0 {
            return Err(CliError::Usage(format!(
                "{name} values must be finite and nonnegative, got {v}"
            )));
        }
    }
    Ok(())
}

fn cmd_attack(args: &AttackArgs) -> Result<(), CliError> {
    let mut cfg = args.run.build_config()?;
    if let Some(out) = &args.out {
        cfg.out_path = out.clone();
    }
    if let Some(alpha) = args.alpha {
        cfg.alphas = vec![alpha];
    }
    if let Some(beta) = args.beta {
        cfg.betas = vec![beta];
    }
    if let Some(tau) = args.tau {
        cfg.taus = vec![tau];
    }
    if args.direct {
        cfg.condition = ConditionSpec::Direct;
    } else if args.both {
        cfg.condition = ConditionSpec::Both;
    }
    check_grid("alpha", &cfg.alphas)?;
    check_grid("beta", &cfg.betas)?;
    if cfg.out_path.as_os_str().is_empty() {
        return Err(CliError::Usage("--out (or a config file) is required".into()));
    }
    let path = run_attack(&cfg).map_err(runtime)?;
    let summary = summarize_results(&path).map_err(runtime)?;
    let line = serde_json::json!({
        "results": path,
        "run_id": cfg.effective_run_id(),
        "n": summary.n,
        "errors": summary.errors,
        "asr": summary.asr,
        "mean_d2g": summary.mean_d2g,
        "mean_ppl": summary.mean_ppl,
    });
    println!("{line}");
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let mut cfg = args.run.build_config()?;
    if let Some(out) = &args.out {
        cfg.out_path = out.clone();
    }
    if !args.alphas.is_empty() {
        cfg.alphas = args.alphas.clone();
    }
    if !args.betas.is_empty() {
        cfg.betas = args.betas.clone();
    }
    if !args.taus.is_empty() {
        cfg.taus = args.taus.clone();
    }
    check_grid("alpha", &cfg.alphas)?;
    check_grid("beta", &cfg.betas)?;
    if cfg.out_path.as_os_str().is_empty() {
        return Err(CliError::Usage("--out (or a config file) is required".into()));
    }
    let csv_path = run_sweep(&cfg).map_err(runtime)?;
    log::info!("sweep summary at {}", csv_path.display());
    print!("{}", fs::read_to_string(&csv_path).map_err(runtime)?);
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut records = read_results(&args.results).map_err(runtime)?;
    let mut judge = JudgeConfig::default();
    args.judge.apply(&mut judge)?;
    rescore(&mut records, &judge).map_err(runtime)?;
    write_results_file(&args.out, &records, &args.results, judge.mode)?;
    let summary = summarize_results(&args.out).map_err(runtime)?;
    let line = serde_json::json!({
        "results": args.out,
        "n": summary.n,
        "errors": summary.errors,
        "asr": summary.asr,
    });
    println!("{line}");
    Ok(())
}

fn write_results_file(
    out: &Path,
    records: &[AttackRecord],
    source: &Path,
    mode: JudgeMode,
) -> Result<(), CliError> {
    let mut text = String::new();
    let header = serde_json::json!({
        "schema": RESULTS_SCHEMA,
        "rescored_from": source,
        "judge_mode": mode,
    });
    text.push_str(&header.to_string());
    text.push('\n');
    for record in records {
        text.push_str(&serde_json::to_string(record).map_err(runtime)?);
        text.push('\n');
    }
    fs::write(out, text).map_err(runtime)
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let mut records = Vec::new();
    for path in &args.results {
        records.extend(read_results(path).map_err(runtime)?);
    }
    if records.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "no records found in the given results file(s)"
        )));
    }
    let rows = aggregate(&records);
    let table = render_markdown(&rows);
    print!("{table}");
    if let Some(path) = &args.out_md {
        fs::write(path, &table).map_err(runtime)?;
    }
    if let Some(path) = &args.out_csv {
        write_csv(&rows, path).map_err(runtime)?;
    }
    Ok(())
}

// ----------------------------------------------------------------------------
// config files

fn load_config_file(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(runtime)?;
    let is_toml = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(&text).map_err(runtime)
    } else {
        serde_json::from_str(&text).map_err(runtime)
    }
}
