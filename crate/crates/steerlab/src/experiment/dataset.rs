//! Prompt-dataset ingestion: CSV, line-delimited JSON, and plain text.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset io ({path}): {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("dataset {path} has no usable prompts")]
    Empty { path: String },
    #[error("csv {path} is missing column {column:?}; available: {available:?}")]
    MissingColumn {
        path: String,
        column: String,
        available: Vec<String>,
    },
    #[error("{path} line {line}: missing or non-string field {field:?}")]
    MissingField {
        path: String,
        line: usize,
        field: String,
    },
    #[error("{path} line {line}: {source}")]
    BadJson {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("csv parse error in {path}: {source}")]
    BadCsv {
        path: String,
        source: csv::Error,
    },
    #[error("duplicate prompt id {id:?} in dataset {dataset}")]
    DuplicateId { dataset: String, id: String },
    #[error("cannot infer dataset format from extension of {0}; expected .csv/.jsonl/.txt")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Csv,
    Jsonl,
    Txt,
}

impl DatasetFormat {
    pub fn from_path(path: &Path) -> Result<Self, DatasetError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(Self::Csv),
            Some("jsonl") | Some("ndjson") => Ok(Self::Jsonl),
            Some("txt") => Ok(Self::Txt),
            _ => Err(DatasetError::UnknownFormat(path.display().to_string())),
        }
    }
}

/// One prompt to attack. `(dataset, id)` is unique within a loaded corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub dataset: String,
    pub text: String,
}

/// Zero-padded row id, at least three digits wide.
fn row_id(row: usize, total: usize) -> String {
    let width = total.saturating_sub(1).to_string().len().max(3);
    format!("{row:0width$}")
}

/// Load prompts from a file. The dataset name is the file stem. `csv_column`
/// names the prompt column for CSV inputs (conventionally "goal"). Records
/// without an explicit id get zero-padded row numbers.
pub fn load_prompts(
    path: &Path,
    format: DatasetFormat,
    csv_column: &str,
) -> Result<Vec<PromptRecord>, DatasetError> {
    let display = path.display().to_string();
    let dataset = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let io_err = |source| DatasetError::Io {
        path: display.clone(),
        source,
    };

    // (explicit id, text) pairs in file order
    let raw: Vec<(Option<String>, String)> = match format {
        DatasetFormat::Txt => fs::read_to_string(path)
            .map_err(io_err)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| (None, l.to_string()))
            .collect(),
        DatasetFormat::Csv => {
            let text = fs::read_to_string(path).map_err(io_err)?;
            let mut reader = csv::Reader::from_reader(text.as_bytes());
            let headers = reader
                .headers()
                .map_err(|source| DatasetError::BadCsv {
                    path: display.clone(),
                    source,
                })?
                .clone();
            let col = headers.iter().position(|h| h == csv_column).ok_or_else(|| {
                DatasetError::MissingColumn {
                    path: display.clone(),
                    column: csv_column.to_string(),
                    available: headers.iter().map(str::to_string).collect(),
                }
            })?;
            let id_col = headers.iter().position(|h| h == "id");
            let mut rows = Vec::new();
            for record in reader.records() {
                let record = record.map_err(|source| DatasetError::BadCsv {
                    path: display.clone(),
                    source,
                })?;
                let text = record.get(col).unwrap_or("").trim().to_string();
                if text.is_empty() {
                    continue;
                }
                let id = id_col.and_then(|c| record.get(c)).map(str::to_string);
                rows.push((id, text));
            }
            rows
        }
        DatasetFormat::Jsonl => {
            let mut rows = Vec::new();
            for (i, line) in fs::read_to_string(path).map_err(io_err)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value =
                    serde_json::from_str(line).map_err(|source| DatasetError::BadJson {
                        path: display.clone(),
                        line: i + 1,
                        source,
                    })?;
                let text = value
                    .get("prompt")
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| DatasetError::MissingField {
                        path: display.clone(),
                        line: i + 1,
                        field: "prompt".into(),
                    })?
                    .trim()
                    .to_string();
                if text.is_empty() {
                    continue;
                }
                let id = value
                    .get("id")
                    .and_then(|v| v.as_str())
                    .map(str::to_string);
                rows.push((id, text));
            }
            rows
        }
    };

    if raw.is_empty() {
        return Err(DatasetError::Empty { path: display });
    }
    let total = raw.len();
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(total);
    for (row, (id, text)) in raw.into_iter().enumerate() {
        let id = id.unwrap_or_else(|| row_id(row, total));
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId {
                dataset: dataset.clone(),
                id,
            });
        }
        records.push(PromptRecord {
            id,
            dataset: dataset.clone(),
            text,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        p
    }

    #[test]
    fn txt_rows_get_padded_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "mini.txt", "first prompt\nsecond prompt\n\nthird prompt\n");
        let records = load_prompts(&p, DatasetFormat::Txt, "goal").unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].id, "000");
        assert_eq!(records[2].id, "002");
        assert_eq!(records[1].dataset, "mini");
        assert_eq!(records[2].text, "third prompt");
    }

    #[test]
    fn csv_uses_named_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "bench.csv",
            "goal,target\nmake a thing,Sure\ndo a thing,Sure\n",
        );
        let records = load_prompts(&p, DatasetFormat::Csv, "goal").unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].text, "make a thing");
        assert_eq!(records[1].id, "001");
    }

    #[test]
    fn csv_missing_column_lists_available() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bench.csv", "a,b\n1,2\n");
        let err = load_prompts(&p, DatasetFormat::Csv, "goal").unwrap_err();
        match err {
            DatasetError::MissingColumn { column, available, .. } => {
                assert_eq!(column, "goal");
                assert_eq!(available, vec!["a".to_string(), "b".to_string()]);
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn csv_id_column_is_respected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "b.csv", "id,goal\nx1,alpha\nx2,beta\n");
        let records = load_prompts(&p, DatasetFormat::Csv, "goal").unwrap();
        assert_eq!(records[0].id, "x1");
        assert_eq!(records[1].id, "x2");
    }

    #[test]
    fn jsonl_reads_prompt_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "d.jsonl",
            "{\"prompt\":\"one\"}\n{\"prompt\":\"two\",\"id\":\"named\"}\n",
        );
        let records = load_prompts(&p, DatasetFormat::Jsonl, "goal").unwrap();
        assert_eq!(records[0].text, "one");
        assert_eq!(records[0].id, "000");
        assert_eq!(records[1].id, "named");
    }

    #[test]
    fn jsonl_missing_field_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "d.jsonl", "{\"prompt\":\"ok\"}\n{\"other\":1}\n");
        let err = load_prompts(&p, DatasetFormat::Jsonl, "goal").unwrap_err();
        assert!(matches!(err, DatasetError::MissingField { line: 2, .. }));
    }

    #[test]
    fn empty_and_duplicate_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.txt", "\n\n");
        assert!(matches!(
            load_prompts(&p, DatasetFormat::Txt, "goal"),
            Err(DatasetError::Empty { .. })
        ));
        let p = write(dir.path(), "dup.csv", "id,goal\nsame,a\nsame,b\n");
        assert!(matches!(
            load_prompts(&p, DatasetFormat::Csv, "goal"),
            Err(DatasetError::DuplicateId { .. })
        ));
    }

    #[test]
    fn format_inference_from_extension() {
        assert_eq!(
            DatasetFormat::from_path(Path::new("x.csv")).unwrap(),
            DatasetFormat::Csv
        );
        assert_eq!(
            DatasetFormat::from_path(Path::new("x.jsonl")).unwrap(),
            DatasetFormat::Jsonl
        );
        assert_eq!(
            DatasetFormat::from_path(Path::new("x.txt")).unwrap(),
            DatasetFormat::Txt
        );
        assert!(DatasetFormat::from_path(Path::new("x.parquet")).is_err());
    }

    #[test]
    fn wide_datasets_get_wider_ids() {
        assert_eq!(row_id(0, 3), "000");
        assert_eq!(row_id(0, 1000), "000");
        assert_eq!(row_id(999, 1000), "999");
        assert_eq!(row_id(0, 1001), "0000");
        assert_eq!(row_id(1000, 1001), "1000");
        assert_eq!(row_id(5, 1), "005");
    }
}
