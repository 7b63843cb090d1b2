//! Aggregation of results files into per-dataset summary tables, rendered as
//! markdown or CSV.

use std::collections::BTreeMap;
use std::path::Path;

use crate::experiment::runner::{AttackRecord, Condition, ExperimentError};

/// One summary row: means over the unflagged records of a
/// (dataset, condition, alpha, beta, tau) group. The synthetic `ALL` dataset
/// averages the per-dataset rows of a condition without weighting by size.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub condition: Condition,
    pub alpha: f32,
    pub beta: f32,
    pub tau: usize,
    pub n: usize,
    pub errors: usize,
    pub asr: f64,
    pub mean_d2g: f64,
    /// Absent when no record in the group has a perplexity score.
    pub mean_ppl: Option<f64>,
}

pub const ALL_DATASETS: &str = "ALL";

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Group records and compute metric means. Flagged records (no verdict)
/// count toward `errors` but never toward any mean. Groups with zero
/// unflagged records are omitted from the table with a warning.
pub fn aggregate(records: &[AttackRecord]) -> Vec<ReportRow> {
    // key: (dataset, condition tag, alpha bits, beta bits, tau)
    type Key = (String, &'static str, u32, u32, usize);
    let mut groups: BTreeMap<Key, Vec<&AttackRecord>> = BTreeMap::new();
    for r in records {
        let tag = match r.condition {
            Condition::Attack => "attack",
            Condition::Direct => "direct",
        };
        let key = (
            r.dataset.clone(),
            tag,
            r.alpha.to_bits(),
            r.beta.to_bits(),
            r.tau,
        );
        groups.entry(key).or_default().push(r);
    }

    let mut rows = Vec::new();
    for ((dataset, tag, alpha_bits, beta_bits, tau), members) in &groups {
        let errors = members.iter().filter(|r| r.is_flagged()).count();
        let scored: Vec<&&AttackRecord> =
            members.iter().filter(|r| !r.is_flagged()).collect();
        if scored.is_empty() {
            log::warn!(
                "group ({dataset}, {tag}, alpha={}, beta={}, tau={tau}) has no \
                 scored records ({errors} flagged); omitting from report",
                f32::from_bits(*alpha_bits),
                f32::from_bits(*beta_bits),
            );
            continue;
        }
        let scores: Vec<f64> = scored.iter().filter_map(|r| r.score()).collect();
        let d2gs: Vec<f64> = scored.iter().map(|r| r.d2g).collect();
        let ppls: Vec<f64> = scored.iter().filter_map(|r| r.ppl).collect();
        rows.push(ReportRow {
            dataset: dataset.clone(),
            condition: if *tag == "attack" {
                Condition::Attack
            } else {
                Condition::Direct
            },
            alpha: f32::from_bits(*alpha_bits),
            beta: f32::from_bits(*beta_bits),
            tau: *tau,
            n: members.len(),
            errors,
            asr: mean(&scores).expect("nonempty scored group"),
            mean_d2g: mean(&d2gs).expect("nonempty scored group"),
            mean_ppl: mean(&ppls),
        });
    }

    // ALL rows: unweighted mean over the per-dataset rows of each
    // (condition, alpha, beta, tau); a small dataset counts as much as a
    // large one.
    type AllKey = (&'static str, u32, u32, usize);
    let mut by_point: BTreeMap<AllKey, Vec<&ReportRow>> = BTreeMap::new();
    for row in &rows {
        let tag = match row.condition {
            Condition::Attack => "attack",
            Condition::Direct => "direct",
        };
        by_point
            .entry((tag, row.alpha.to_bits(), row.beta.to_bits(), row.tau))
            .or_default()
            .push(row);
    }
    let mut all_rows = Vec::new();
    for ((tag, alpha_bits, beta_bits, tau), members) in &by_point {
        let asrs: Vec<f64> = members.iter().map(|r| r.asr).collect();
        let d2gs: Vec<f64> = members.iter().map(|r| r.mean_d2g).collect();
        let ppls: Vec<f64> = members.iter().filter_map(|r| r.mean_ppl).collect();
        all_rows.push(ReportRow {
            dataset: ALL_DATASETS.to_string(),
            condition: if *tag == "attack" {
                Condition::Attack
            } else {
                Condition::Direct
            },
            alpha: f32::from_bits(*alpha_bits),
            beta: f32::from_bits(*beta_bits),
            tau: *tau,
            n: members.iter().map(|r| r.n).sum(),
            errors: members.iter().map(|r| r.errors).sum(),
            asr: mean(&asrs).expect("point has dataset rows"),
            mean_d2g: mean(&d2gs).expect("point has dataset rows"),
            mean_ppl: mean(&ppls),
        });
    }
    rows.extend(all_rows);
    rows
}

fn ppl_cell(row: &ReportRow) -> String {
    row.mean_ppl.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// Render rows as a markdown table; metric cells use four decimal places.
pub fn render_markdown(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    out.push_str("| dataset | condition | alpha | beta | tau | n | errors | asr | d2g | ppl |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for row in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {:.4} | {:.4} | {} |\n",
            row.dataset,
            row.condition,
            row.alpha,
            row.beta,
            row.tau,
            row.n,
            row.errors,
            row.asr,
            row.mean_d2g,
            ppl_cell(row),
        ));
    }
    out
}

/// Write rows as CSV with a fixed column order.
pub fn write_csv(rows: &[ReportRow], path: &Path) -> Result<(), ExperimentError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "dataset", "condition", "alpha", "beta", "tau", "n", "errors", "asr", "mean_d2g",
        "mean_ppl",
    ])?;
    for row in rows {
        writer.write_record([
            row.dataset.clone(),
            row.condition.to_string(),
            row.alpha.to_string(),
            row.beta.to_string(),
            row.tau.to_string(),
            row.n.to_string(),
            row.errors.to_string(),
            format!("{:.4}", row.asr),
            format!("{:.4}", row.mean_d2g),
            ppl_cell(row),
        ])?;
    }
    writer.flush().map_err(ExperimentError::Io)?;
    Ok(())
}
