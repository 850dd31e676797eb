//! Problem-file ingestion.
//!
//! The native schema is JSON lines. An optional first line
//! `{"schema":"gear-problems/1"}` is accepted; every other line is one
//! problem whose values are canonical text:
//!
//! ```text
//! {"id":"c001","train":[{"input":"[1,2]","output":"[2]"}],"test":[...]}
//! ```
//!
//! Adapters cover the public layouts:
//! * ARC task files (`{"train":[{"input":[[..]],"output":[[..]]}],"test":[..]}`,
//!   id from the file stem), and ARC combined files mapping id to task.
//!   Test pairs without an `output` contribute their input to corpus spaces
//!   only.
//! * List Functions files (`{"examples":[{"input":[..],"output":[..]}]}`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::Value as Json;
use thiserror::Error;

use crate::values::{parse_value, Grid, Observation, ObservationSet, Value};

pub const PROBLEMS_SCHEMA: &str = "gear-problems/1";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{} corpus entries failed:\n{}", .0.len(), .0.join("\n"))]
    Corpus(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPair {
    pub input: Value,
    pub output: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Problem {
    pub id: String,
    pub train: Vec<RawPair>,
    pub test: Vec<RawPair>,
}

impl Problem {
    pub fn all_inputs(&self) -> impl Iterator<Item = &Value> {
        self.train.iter().chain(&self.test).map(|p| &p.input)
    }

    /// Pools train and test pairs into one observation set. Returns the
    /// number of exact duplicates that were dropped.
    pub fn observations(&self) -> (ObservationSet, usize) {
        let complete = |pairs: &[RawPair]| -> Vec<Observation> {
            pairs
                .iter()
                .filter_map(|p| {
                    p.output
                        .as_ref()
                        .map(|out| Observation::new(p.input.clone(), out.clone()))
                })
                .collect()
        };
        ObservationSet::pooled(self.id.clone(), complete(&self.train), complete(&self.test))
    }
}

#[derive(Deserialize)]
struct NativePair {
    input: String,
    output: Option<String>,
}

#[derive(Deserialize)]
struct NativeProblem {
    id: String,
    #[serde(default)]
    train: Vec<NativePair>,
    #[serde(default)]
    test: Vec<NativePair>,
}

fn schema_err(path: &Path, line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Schema {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn parse_native(path: &Path, text: &str) -> Result<Vec<Problem>, IngestError> {
    let mut problems = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(Json::Object(map)) = serde_json::from_str::<Json>(line) {
                if let Some(schema) = map.get("schema") {
                    if schema.as_str() != Some(PROBLEMS_SCHEMA) {
                        return Err(schema_err(
                            path,
                            lineno,
                            format!("unsupported schema {schema}"),
                        ));
                    }
                    continue;
                }
            }
        }
        let raw: NativeProblem =
            serde_json::from_str(line).map_err(|e| schema_err(path, lineno, e.to_string()))?;
        let convert = |pairs: Vec<NativePair>| -> Result<Vec<RawPair>, IngestError> {
            pairs
                .into_iter()
                .map(|p| {
                    let input = parse_value(&p.input)
                        .map_err(|e| schema_err(path, lineno, format!("input: {e}")))?;
                    let output = p
                        .output
                        .map(|o| parse_value(&o))
                        .transpose()
                        .map_err(|e| schema_err(path, lineno, format!("output: {e}")))?;
                    Ok(RawPair { input, output })
                })
                .collect()
        };
        problems.push(Problem {
            id: raw.id,
            train: convert(raw.train)?,
            test: convert(raw.test)?,
        });
    }
    Ok(problems)
}

fn json_grid(json: &Json) -> Result<Value, String> {
    let rows = json.as_array().ok_or("grid must be an array of rows")?;
    let mut cells: Vec<Vec<u8>> = Vec::with_capacity(rows.len());
    for row in rows {
        let row = row.as_array().ok_or("grid row must be an array")?;
        let parsed: Option<Vec<u8>> = row
            .iter()
            .map(|c| c.as_u64().and_then(|c| u8::try_from(c).ok()))
            .collect();
        cells.push(parsed.ok_or("grid cells must be integers in 0..=255")?);
    }
    Grid::from_rows(&cells)
        .map(Value::Grid)
        .map_err(|e| e.to_string())
}

fn json_int_list(json: &Json) -> Result<Value, String> {
    let items = json.as_array().ok_or("expected a list of integers")?;
    items
        .iter()
        .map(|v| {
            v.as_i64()
                .map(Value::int)
                .ok_or_else(|| "expected integer".to_string())
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Value::List)
}

fn adapt_pairs(
    pairs: Option<&Json>,
    convert: fn(&Json) -> Result<Value, String>,
) -> Result<Vec<RawPair>, String> {
    let Some(pairs) = pairs else {
        return Ok(Vec::new());
    };
    let pairs = pairs.as_array().ok_or("pairs must be an array")?;
    pairs
        .iter()
        .map(|p| {
            let input = p.get("input").ok_or("pair without input")?;
            Ok(RawPair {
                input: convert(input)?,
                output: p.get("output").map(convert).transpose()?,
            })
        })
        .collect()
}

fn arc_task(id: String, task: &Json) -> Result<Problem, String> {
    Ok(Problem {
        id,
        train: adapt_pairs(task.get("train"), json_grid)?,
        test: adapt_pairs(task.get("test"), json_grid)?,
    })
}

fn parse_json_file(path: &Path, text: &str) -> Result<Vec<Problem>, IngestError> {
    let json: Json =
        serde_json::from_str(text).map_err(|e| schema_err(path, e.line(), e.to_string()))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let wrap = |r: Result<Vec<Problem>, String>| r.map_err(|m| schema_err(path, 1, m));
    let Json::Object(map) = &json else {
        return Err(schema_err(path, 1, "expected a JSON object"));
    };
    if map.contains_key("train") {
        return wrap(arc_task(stem, &json).map(|p| vec![p]));
    }
    if let Some(examples) = map.get("examples") {
        return wrap(adapt_pairs(Some(examples), json_int_list).map(|train| {
            vec![Problem {
                id: stem,
                train,
                test: Vec::new(),
            }]
        }));
    }
    // Combined ARC file: id -> task, in file order (serde_json keeps keys sorted).
    wrap(
        map.iter()
            .map(|(id, task)| {
                if task.get("train").is_none() {
                    return Err(format!("entry {id} is not an ARC task"));
                }
                arc_task(id.clone(), task)
            })
            .collect(),
    )
}

/// Loads one problem file, choosing the adapter by extension and shape.
pub fn load_problem_file(path: &Path) -> Result<Vec<Problem>, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => parse_json_file(path, &text),
        _ => parse_native(path, &text),
    }
}

fn expand(path: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for entry in entries {
            if entry.is_dir()
                || matches!(
                    entry.extension().and_then(|e| e.to_str()),
                    Some("json" | "jsonl")
                )
            {
                expand(&entry, out)?;
            }
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Loads every problem under the given files or directories (directories
/// are walked in sorted order). All failing entries are reported together.
pub fn load_corpus<P: AsRef<Path>>(paths: &[P]) -> Result<Vec<Problem>, IngestError> {
    let mut files = Vec::new();
    let mut failures = Vec::new();
    for p in paths {
        if let Err(e) = expand(p.as_ref(), &mut files) {
            failures.push(format!("{}: {e}", p.as_ref().display()));
        }
    }
    let mut problems = Vec::new();
    for file in &files {
        match load_problem_file(file) {
            Ok(mut ps) => problems.append(&mut ps),
            Err(e) => failures.push(e.to_string()),
        }
    }
    if failures.is_empty() {
        Ok(problems)
    } else {
        Err(IngestError::Corpus(failures))
    }
}
