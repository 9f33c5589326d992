use std::collections::HashSet;
use std::fs;
use std::path::Path;

use log::warn;
use serde_json::{Map, Value};

use super::PipelineError;
use crate::datamodel::{unknown_field_count, validate_example, QAExample, Task};

/// A validated dataset plus what was skipped on the way in.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub examples: Vec<QAExample>,
    /// Non-blank lines seen in the file.
    pub total_lines: usize,
    /// `(1-based line number, reason)` for every rejected line.
    pub invalid: Vec<(usize, String)>,
    pub unknown_fields: usize,
}

/// Rejected lines may make up at most this share of the file.
pub const MAX_INVALID_FRACTION: f64 = 0.01;

/// Reads a JSONL dataset. Records without a `task` take `task`; records
/// without an `id` take their 0-based line number. Parse and validation
/// failures are collected, and loading aborts when more than 1% of lines
/// are bad. `limit` truncates the validated list.
pub fn load_dataset(
    path: &Path,
    task: Task,
    limit: Option<usize>,
) -> Result<LoadedDataset, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    parse_dataset(&text, task, limit)
}

pub fn parse_dataset(
    text: &str,
    task: Task,
    limit: Option<usize>,
) -> Result<LoadedDataset, PipelineError> {
    let mut examples = Vec::new();
    let mut invalid = Vec::new();
    let mut unknown_fields = 0;
    let mut total_lines = 0;
    let mut seen = HashSet::new();

    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        total_lines += 1;
        let line_no = idx + 1;
        let mut raw: Map<String, Value> = match serde_json::from_str(line) {
            Ok(Value::Object(m)) => m,
            Ok(other) => {
                invalid.push((line_no, format!("expected a JSON object, got {other}")));
                continue;
            }
            Err(e) => {
                invalid.push((line_no, format!("parse error: {e}")));
                continue;
            }
        };
        unknown_fields += unknown_field_count(&raw);
        raw.entry("task")
            .or_insert_with(|| Value::String(task.as_str().into()));
        match validate_example(&raw, &idx.to_string()) {
            Ok(ex) if ex.task != task => invalid.push((
                line_no,
                format!(
                    "record {} has task {}, dataset task is {}",
                    ex.id,
                    ex.task.as_str(),
                    task.as_str()
                ),
            )),
            Ok(ex) => {
                if seen.insert(ex.id.clone()) {
                    examples.push(ex);
                } else {
                    invalid.push((line_no, format!("duplicate id {}", ex.id)));
                }
            }
            Err(e) => invalid.push((line_no, e.to_string())),
        }
    }

    if invalid.len() as f64 > MAX_INVALID_FRACTION * total_lines as f64 {
        return Err(PipelineError::TooManyInvalid {
            invalid: invalid.len(),
            total: total_lines,
            first: invalid
                .first()
                .map(|(l, m)| format!("line {l}: {m}"))
                .unwrap_or_default(),
        });
    }
    for (line, reason) in &invalid {
        warn!("skipping dataset line {line}: {reason}");
    }
    if unknown_fields > 0 {
        warn!("ignored {unknown_fields} unknown field(s) in dataset");
    }
    if let Some(n) = limit {
        examples.truncate(n);
    }
    Ok(LoadedDataset {
        examples,
        total_lines,
        invalid,
        unknown_fields,
    })
}
