//! End-to-end tests of the `steerlab` binary: exit codes, golden help text,
//! and the full fixture pipeline.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use steerlab::experiment::AttackRecord;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_steerlab"))
}

fn assets(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../assets")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn assert_code(output: &Output, want: i32) {
    assert_eq!(
        output.status.code(),
        Some(want),
        "stdout:\n{}\nstderr:\n{}",
        stdout(output),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Parse a results file into records sorted by key with wall time zeroed,
/// for run-to-run comparison.
fn normalized_records(path: &Path) -> Vec<AttackRecord> {
    let mut records = steerlab::experiment::read_results(path).unwrap();
    for r in &mut records {
        r.wall_time_ms = 0;
    }
    records.sort_by_key(|r| r.key());
    records
}

// ----------------------------------------------------------------------------
// exit codes and help

#[test]
fn help_matches_golden_file() {
    let output = run(&["--help"]);
    assert_code(&output, 0);
    let golden = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/help.txt"),
    )
    .unwrap();
    assert_eq!(stdout(&output), golden);
}

#[test]
fn every_subcommand_has_help() {
    for sub in [
        "export-fixture",
        "build-vectors",
        "generate",
        "attack",
        "sweep",
        "eval",
        "report",
    ] {
        let output = run(&[sub, "--help"]);
        assert_code(&output, 0);
        assert!(stdout(&output).contains("Usage:"), "{sub} help missing usage");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let output = run(&["export-fixture", "--out", "/tmp/x", "--bogus"]);
    assert_code(&output, 1);
}

#[test]
fn unknown_preset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("model");
    let output = run(&["export-fixture", "--out", out.to_str().unwrap(), "--preset", "huge"]);
    assert_code(&output, 1);
    assert!(
        String::from_utf8_lossy(&output.stderr).contains("unknown preset"),
        "stderr should explain the bad preset"
    );
}

#[test]
fn missing_required_flags_are_usage_errors() {
    let output = run(&["attack"]);
    assert_code(&output, 1);
}

// ----------------------------------------------------------------------------
// fixture export

#[test]
fn export_fixture_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let output = run(&["export-fixture", "--out", out.to_str().unwrap(), "--seed", "42"]);
        assert_code(&output, 0);
    }
    let wa = std::fs::read(a.join("model.safetensors")).unwrap();
    let wb = std::fs::read(b.join("model.safetensors")).unwrap();
    assert_eq!(wa, wb, "same seed must give byte-identical weights");
}

// ----------------------------------------------------------------------------
// full pipeline

struct Pipeline {
    _dir: tempfile::TempDir,
    model: PathBuf,
    vectors: PathBuf,
    root: PathBuf,
}

/// Export the fixture and build its steering vector from the shipped
/// default prefix files.
fn setup_pipeline() -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model");
    let vectors = dir.path().join("vectors.json");
    let output = run(&["export-fixture", "--out", model.to_str().unwrap(), "--seed", "42"]);
    assert_code(&output, 0);
    let output = run(&[
        "build-vectors",
        "--model",
        model.to_str().unwrap(),
        "--com",
        assets("compliance_prefixes.txt").to_str().unwrap(),
        "--ref",
        assets("refusal_prefixes.txt").to_str().unwrap(),
        "--out",
        vectors.to_str().unwrap(),
    ]);
    assert_code(&output, 0);
    let root = dir.path().to_path_buf();
    Pipeline {
        _dir: dir,
        model,
        vectors,
        root,
    }
}

#[test]
fn full_pipeline_runs_quickly() {
    let started = Instant::now();
    let p = setup_pipeline();
    let results = p.root.join("results.jsonl");
    let output = run(&[
        "attack",
        "--model",
        p.model.to_str().unwrap(),
        "--prompts",
        assets("demo_prompts.csv").to_str().unwrap(),
        "--vectors",
        p.vectors.to_str().unwrap(),
        "--out",
        results.to_str().unwrap(),
    ]);
    assert_code(&output, 0);
    let summary: serde_json::Value = serde_json::from_str(stdout(&output).trim()).unwrap();
    assert_eq!(summary["n"], 6);

    let output = run(&["report", "--results", results.to_str().unwrap()]);
    assert_code(&output, 0);
    let table = stdout(&output);
    assert!(table.contains("| dataset | condition |"), "table:\n{table}");
    assert!(table.contains("demo_prompts"));
    assert!(
        started.elapsed().as_secs() < 60,
        "pipeline took {:?}, budget is 60 s",
        started.elapsed()
    );
}

#[test]
fn build_vectors_rejects_identical_prefix_sets() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model");
    assert_code(
        &run(&["export-fixture", "--out", model.to_str().unwrap()]),
        0,
    );
    let out = dir.path().join("vec.json");
    let output = run(&[
        "build-vectors",
        "--model",
        model.to_str().unwrap(),
        "--com",
        assets("compliance_prefixes.txt").to_str().unwrap(),
        "--ref",
        assets("compliance_prefixes.txt").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_code(&output, 2);
    assert!(
        String::from_utf8_lossy(&output.stderr).contains("zero"),
        "stderr should name the degenerate layers"
    );
}

#[test]
fn swapping_prefix_roles_negates_the_vector() {
    let p = setup_pipeline();
    let swapped = p.root.join("swapped.json");
    let output = run(&[
        "build-vectors",
        "--model",
        p.model.to_str().unwrap(),
        "--com",
        assets("refusal_prefixes.txt").to_str().unwrap(),
        "--ref",
        assets("compliance_prefixes.txt").to_str().unwrap(),
        "--out",
        swapped.to_str().unwrap(),
    ]);
    assert_code(&output, 0);
    let forward = steerlab::steering::SteeringVector::load(&p.vectors).unwrap();
    let backward = steerlab::steering::SteeringVector::load(&swapped).unwrap();
    assert_eq!(forward.layers.len(), backward.layers.len());
    for (f, b) in forward.layers.iter().zip(&backward.layers) {
        for (x, y) in f.iter().zip(b) {
            assert!((x + y).abs() < 1e-6, "expected negation, got {x} vs {y}");
        }
    }
}

#[test]
fn mismatched_vector_needs_force() {
    let p = setup_pipeline();
    let other_model = p.root.join("other");
    assert_code(
        &run(&["export-fixture", "--out", other_model.to_str().unwrap(), "--seed", "43"]),
        0,
    );
    let results = p.root.join("results.jsonl");
    let prompts = assets("demo_prompts.csv");
    let base = [
        "attack",
        "--model",
        other_model.to_str().unwrap(),
        "--prompts",
        prompts.to_str().unwrap(),
        "--vectors",
        p.vectors.to_str().unwrap(),
        "--out",
        results.to_str().unwrap(),
        "--max-new-tokens",
        "8",
    ];
    let output = run(&base);
    assert_code(&output, 2);

    let mut forced: Vec<&str> = base.to_vec();
    forced.push("--force");
    let output = run(&forced);
    assert_code(&output, 0);
}

#[test]
fn alpha_zero_matches_a_direct_run() {
    let p = setup_pipeline();
    let zeroed = p.root.join("zeroed.jsonl");
    let output = run(&[
        "attack",
        "--model",
        p.model.to_str().unwrap(),
        "--prompts",
        assets("demo_prompts.csv").to_str().unwrap(),
        "--vectors",
        p.vectors.to_str().unwrap(),
        "--out",
        zeroed.to_str().unwrap(),
        "--alpha",
        "0",
        "--max-new-tokens",
        "24",
    ]);
    assert_code(&output, 0);
    let direct = p.root.join("direct.jsonl");
    let output = run(&[
        "attack",
        "--model",
        p.model.to_str().unwrap(),
        "--prompts",
        assets("demo_prompts.csv").to_str().unwrap(),
        "--out",
        direct.to_str().unwrap(),
        "--direct",
        "--max-new-tokens",
        "24",
    ]);
    assert_code(&output, 0);

    let zeroed = normalized_records(&zeroed);
    let direct = normalized_records(&direct);
    assert_eq!(zeroed.len(), 6);
    assert_eq!(zeroed.len(), direct.len());
    for (z, d) in zeroed.iter().zip(&direct) {
        assert_eq!(z.prompt_id, d.prompt_id);
        assert_eq!(z.seed, d.seed, "conditions must share per-prompt seeds");
        assert_eq!(z.response, d.response);
        assert_eq!(z.token_count, d.token_count);
        assert_eq!(z.ppl, d.ppl);
        assert_eq!(z.d2g, d.d2g);
    }
}

#[test]
fn one_point_sweep_equals_attack_modulo_wrapper() {
    let p = setup_pipeline();
    let com = assets("compliance_prefixes.txt");
    let refp = assets("refusal_prefixes.txt");
    let attack_out = p.root.join("attack.jsonl");
    let output = run(&[
        "attack",
        "--model",
        p.model.to_str().unwrap(),
        "--prompts",
        assets("demo_prompts.csv").to_str().unwrap(),
        "--com",
        com.to_str().unwrap(),
        "--ref",
        refp.to_str().unwrap(),
        "--out",
        attack_out.to_str().unwrap(),
        "--alpha",
        "5",
        "--beta",
        "0.5",
        "--tau",
        "3",
        "--max-new-tokens",
        "16",
    ]);
    assert_code(&output, 0);

    let sweep_dir = p.root.join("sweep");
    let output = run(&[
        "sweep",
        "--model",
        p.model.to_str().unwrap(),
        "--prompts",
        assets("demo_prompts.csv").to_str().unwrap(),
        "--com",
        com.to_str().unwrap(),
        "--ref",
        refp.to_str().unwrap(),
        "--out",
        sweep_dir.to_str().unwrap(),
        "--alphas",
        "5",
        "--betas",
        "0.5",
        "--taus",
        "3",
        "--max-new-tokens",
        "16",
    ]);
    assert_code(&output, 0);
    let csv = stdout(&output);
    assert!(csv.starts_with("alpha,beta,tau,asr,mean_d2g,mean_ppl,n,errors"));

    let from_attack = normalized_records(&attack_out);
    let from_sweep = normalized_records(&sweep_dir.join("point-a5-b0.5-t3.jsonl"));
    assert_eq!(from_attack, from_sweep);
}

#[test]
fn eval_rescores_without_regenerating() {
    let p = setup_pipeline();
    let results = p.root.join("results.jsonl");
    let output = run(&[
        "attack",
        "--model",
        p.model.to_str().unwrap(),
        "--prompts",
        assets("demo_prompts.csv").to_str().unwrap(),
        "--vectors",
        p.vectors.to_str().unwrap(),
        "--out",
        results.to_str().unwrap(),
        "--max-new-tokens",
        "16",
    ]);
    assert_code(&output, 0);
    let rescored = p.root.join("rescored.jsonl");
    let output = run(&[
        "eval",
        "--results",
        results.to_str().unwrap(),
        "--out",
        rescored.to_str().unwrap(),
        "--judge",
        "keyword",
        "--keywords-file",
        assets("refusal_keywords.txt").to_str().unwrap(),
    ]);
    assert_code(&output, 0);

    let before = normalized_records(&results);
    let after = normalized_records(&rescored);
    assert_eq!(before.len(), after.len());
    for (b, a) in before.iter().zip(&after) {
        assert_eq!(b.response, a.response, "eval must not regenerate");
        assert_eq!(b.ppl, a.ppl);
        assert!(a.verdict.is_some());
    }
}

// ----------------------------------------------------------------------------
// report on a hand-scored corpus

#[test]
fn report_reproduces_hand_computed_asr() {
    use steerlab::decoding::FinishReason;
    use steerlab::experiment::Condition;
    use steerlab::metrics::{Verdict, VerdictLabel};

    // two Safe, two Unsafe, two Controversial: mean is (0+0+1+1+0.5+0.5)/6 = 0.5
    let labels = [
        VerdictLabel::Safe,
        VerdictLabel::Safe,
        VerdictLabel::Unsafe,
        VerdictLabel::Unsafe,
        VerdictLabel::Controversial,
        VerdictLabel::Controversial,
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hand.jsonl");
    let mut lines = vec![format!(
        "{}",
        serde_json::json!({"schema": steerlab::experiment::RESULTS_SCHEMA})
    )];
    for (i, label) in labels.iter().enumerate() {
        let record = AttackRecord {
            run_id: "hand".into(),
            dataset: "corpus".into(),
            prompt_id: format!("{i:03}"),
            prompt: format!("prompt {i}"),
            condition: Condition::Attack,
            repeat: 0,
            alpha: 5.0,
            beta: 0.5,
            tau: 150,
            seed: i as u64,
            response: "response text here".into(),
            token_count: 3,
            finish_reason: FinishReason::Eos,
            truncated_by_context: false,
            verdict: Some(Verdict::new(*label, "hand", "hand-scored")),
            judge_error: None,
            ppl: Some(2.0),
            d2g: 1.0,
            wall_time_ms: 1,
            model_id: "m".into(),
            config_hash: "c".into(),
            vector_sha: None,
        };
        lines.push(serde_json::to_string(&record).unwrap());
    }
    std::fs::write(&path, lines.join("\n")).unwrap();

    let md = dir.path().join("report.md");
    let csv = dir.path().join("report.csv");
    let output = run(&[
        "report",
        "--results",
        path.to_str().unwrap(),
        "--out-md",
        md.to_str().unwrap(),
        "--out-csv",
        csv.to_str().unwrap(),
    ]);
    assert_code(&output, 0);
    let table = stdout(&output);
    let row = table
        .lines()
        .find(|l| l.contains("| corpus |"))
        .expect("corpus row present");
    assert!(row.contains("| 0.5000 |"), "row: {row}");
    assert_eq!(std::fs::read_to_string(&md).unwrap(), table);
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_text.lines().any(|l| l.starts_with("corpus,attack") && l.contains("0.5000")));
}
