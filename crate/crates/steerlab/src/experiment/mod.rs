//! End-to-end experiment orchestration: dataset loading, attack and sweep
//! runs over a model with a steering hook installed, and report aggregation.

pub mod dataset;
pub mod report;
pub mod runner;

pub use dataset::{load_prompts, DatasetError, DatasetFormat, PromptRecord};
pub use report::{aggregate, render_markdown, write_csv, ReportRow, ALL_DATASETS};
pub use runner::{
    load_all_prompts, read_results, rescore, run_attack, run_sweep, summarize_results,
    AttackRecord, Condition, ConditionSpec, ExperimentConfig, ExperimentError, ResultsSummary,
    RESULTS_SCHEMA,
};
