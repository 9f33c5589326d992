//! Shared domain types: benchmark records, documents, embeddings, cluster
//! assignments, prompt templates and metric reports.
//!
//! Everything here is an immutable value once constructed. Gold answers are
//! stored verbatim; normalization only ever happens inside
//! [`crate::evaluation`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("record {id}: missing required field `{field}`")]
    MissingField { id: String, field: &'static str },
    #[error("record {id}: answer list is empty or contains an empty answer")]
    EmptyAnswerList { id: String },
    #[error("record {id}: inconsistent task fields: {reason}")]
    InconsistentTaskFields { id: String, reason: String },
    #[error("record {id}: invalid field `{field}`: {reason}")]
    InvalidField {
        id: String,
        field: &'static str,
        reason: String,
    },
    #[error("embedding must have at least one dimension")]
    EmptyEmbedding,
    #[error("embedding contains a non-finite value at index {index}")]
    NonFiniteEmbedding { index: usize },
    #[error("prompt template `{id}` ({role:?}) is missing placeholder {placeholder}")]
    MissingPlaceholder {
        id: String,
        role: TemplateRole,
        placeholder: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Qa,
    FactCheck,
    Dialogue,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Qa => "qa",
            Task::FactCheck => "fact_check",
            Task::Dialogue => "dialogue",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Supports,
    Refutes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentSource {
    Generated,
    Retrieved,
}

/// How a generated document was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Nucleus,
    HumanPrompt,
    Clustered,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Greedy => "greedy",
            Strategy::Nucleus => "nucleus",
            Strategy::HumanPrompt => "human_prompt",
            Strategy::Clustered => "clustered",
        }
    }
}

/// One contextual passage together with where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub text: String,
    pub source: DocumentSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    pub rank: usize,
}

impl Document {
    pub fn generated(
        text: impl Into<String>,
        strategy: Strategy,
        prompt_id: Option<String>,
        rank: usize,
    ) -> Self {
        Self {
            text: text.into(),
            source: DocumentSource::Generated,
            strategy: Some(strategy),
            prompt_id,
            rank,
        }
    }

    pub fn retrieved(text: impl Into<String>, rank: usize) -> Self {
        Self {
            text: text.into(),
            source: DocumentSource::Retrieved,
            strategy: None,
            prompt_id: None,
            rank,
        }
    }
}

/// Checks that ranks in a document list are exactly `0..len` in order.
pub fn ranks_are_canonical(docs: &[Document]) -> bool {
    docs.iter().enumerate().all(|(i, d)| d.rank == i)
}

/// Rewrites ranks to `0..len` following list order.
pub fn rerank(docs: &mut [Document]) {
    for (i, d) in docs.iter_mut().enumerate() {
        d.rank = i;
    }
}

/// One benchmark record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub task: Task,
    /// The question, claim (fact checking) or flattened dialogue history.
    pub question: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_docs: Option<Vec<Document>>,
}

/// Field names a dataset record may carry; anything else is ignored.
pub const KNOWN_FIELDS: &[&str] = &[
    "id",
    "task",
    "question",
    "answers",
    "label",
    "retrieved_docs",
];

/// Number of fields in `raw` that are not part of the record schema.
pub fn unknown_field_count(raw: &Map<String, Value>) -> usize {
    raw.keys()
        .filter(|k| !KNOWN_FIELDS.contains(&k.as_str()))
        .count()
}

/// Builds a [`QAExample`] from one parsed dataset line.
///
/// `fallback_id` is used when the record carries no `id` (the loader passes
/// the 0-based line number). A dialogue `question` may be given as a list of
/// turns, which are joined with a single newline.
pub fn validate_example(
    raw: &Map<String, Value>,
    fallback_id: &str,
) -> Result<QAExample, DataError> {
    let id = match raw.get("id") {
        None | Some(Value::Null) => fallback_id.to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(other) => {
            return Err(DataError::InvalidField {
                id: fallback_id.to_string(),
                field: "id",
                reason: format!("expected string, got {other}"),
            })
        }
    };

    let task = match raw.get("task") {
        None | Some(Value::Null) => Task::Qa,
        Some(v) => {
            serde_json::from_value::<Task>(v.clone()).map_err(|e| DataError::InvalidField {
                id: id.clone(),
                field: "task",
                reason: e.to_string(),
            })?
        }
    };

    let question = match raw.get("question") {
        None | Some(Value::Null) => {
            return Err(DataError::MissingField {
                id,
                field: "question",
            })
        }
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(turns)) if task == Task::Dialogue => {
            let mut parts = Vec::with_capacity(turns.len());
            for t in turns {
                match t {
                    Value::String(s) => parts.push(s.as_str()),
                    other => {
                        return Err(DataError::InvalidField {
                            id,
                            field: "question",
                            reason: format!("dialogue turn must be a string, got {other}"),
                        })
                    }
                }
            }
            parts.join("\n")
        }
        Some(other) => {
            return Err(DataError::InvalidField {
                id,
                field: "question",
                reason: format!("expected string, got {other}"),
            })
        }
    };
    if question.trim().is_empty() {
        return Err(DataError::InvalidField {
            id,
            field: "question",
            reason: "must not be empty".into(),
        });
    }

    let answers = match raw.get("answers") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => {
            let mut out = Vec::with_capacity(items.len());
            for item in items {
                match item {
                    Value::String(s) => out.push(s.clone()),
                    other => {
                        return Err(DataError::InvalidField {
                            id,
                            field: "answers",
                            reason: format!("answers must be strings, got {other}"),
                        })
                    }
                }
            }
            Some(out)
        }
        Some(Value::String(s)) => Some(vec![s.clone()]),
        Some(other) => {
            return Err(DataError::InvalidField {
                id,
                field: "answers",
                reason: format!("expected list of strings, got {other}"),
            })
        }
    };

    let label = match raw.get("label") {
        None | Some(Value::Null) => None,
        Some(v) => Some(serde_json::from_value::<Label>(v.clone()).map_err(|e| {
            DataError::InvalidField {
                id: id.clone(),
                field: "label",
                reason: e.to_string(),
            }
        })?),
    };

    let answers = match task {
        Task::Qa | Task::Dialogue => {
            let answers = answers.ok_or_else(|| DataError::MissingField {
                id: id.clone(),
                field: "answers",
            })?;
            if answers.is_empty() || answers.iter().any(|a| a.is_empty()) {
                return Err(DataError::EmptyAnswerList { id });
            }
            if label.is_some() {
                return Err(DataError::InconsistentTaskFields {
                    id,
                    reason: format!(
                        "`label` is only allowed for fact_check, task is {}",
                        task.as_str()
                    ),
                });
            }
            answers
        }
        Task::FactCheck => {
            if label.is_none() {
                return Err(DataError::InconsistentTaskFields {
                    id,
                    reason: "fact_check records require `label`".into(),
                });
            }
            let answers = answers.unwrap_or_default();
            if answers.iter().any(|a| a.is_empty()) {
                return Err(DataError::EmptyAnswerList { id });
            }
            answers
        }
    };

    let retrieved_docs = match raw.get("retrieved_docs") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => Some(parse_retrieved_docs(&id, items)?),
        Some(other) => {
            return Err(DataError::InvalidField {
                id,
                field: "retrieved_docs",
                reason: format!("expected list, got {other}"),
            })
        }
    };

    Ok(QAExample {
        id,
        task,
        question,
        answers,
        label,
        retrieved_docs,
    })
}

fn parse_retrieved_docs(id: &str, items: &[Value]) -> Result<Vec<Document>, DataError> {
    let invalid = |reason: String| DataError::InvalidField {
        id: id.to_string(),
        field: "retrieved_docs",
        reason,
    };
    let mut docs = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let doc = match item {
            // Bare passages are accepted as retrieved documents ranked by position.
            Value::String(s) => Document::retrieved(s.clone(), i),
            Value::Object(obj) => {
                let text = obj
                    .get("text")
                    .and_then(Value::as_str)
                    .ok_or_else(|| invalid(format!("document {i} has no text")))?;
                let source = match obj.get("source") {
                    None | Some(Value::Null) => DocumentSource::Retrieved,
                    Some(v) => {
                        serde_json::from_value(v.clone()).map_err(|e| invalid(e.to_string()))?
                    }
                };
                let strategy: Option<Strategy> = match obj.get("strategy") {
                    None | Some(Value::Null) => None,
                    Some(v) => Some(
                        serde_json::from_value(v.clone()).map_err(|e| invalid(e.to_string()))?,
                    ),
                };
                let prompt_id = obj
                    .get("prompt_id")
                    .and_then(Value::as_str)
                    .map(str::to_string);
                let rank = match obj.get("rank") {
                    None | Some(Value::Null) => i,
                    Some(v) => v.as_u64().ok_or_else(|| {
                        invalid(format!("document {i} rank must be a non-negative integer"))
                    })? as usize,
                };
                Document {
                    text: text.to_string(),
                    source,
                    strategy,
                    prompt_id,
                    rank,
                }
            }
            other => {
                return Err(invalid(format!(
                    "document {i} must be an object or string, got {other}"
                )))
            }
        };
        validate_document(&doc).map_err(invalid)?;
        docs.push(doc);
    }
    if !ranks_are_canonical(&docs) {
        return Err(invalid(
            "document ranks must be 0..len-1 in list order".into(),
        ));
    }
    Ok(docs)
}

/// Checks the per-document invariants (non-empty text, strategy iff generated).
pub fn validate_document(doc: &Document) -> Result<(), String> {
    if doc.text.is_empty() {
        return Err(format!("document {} has empty text", doc.rank));
    }
    match (doc.source, doc.strategy) {
        (DocumentSource::Generated, None) => {
            Err(format!("generated document {} has no strategy", doc.rank))
        }
        (DocumentSource::Retrieved, Some(_)) => Err(format!(
            "retrieved document {} carries a strategy",
            doc.rank
        )),
        _ => Ok(()),
    }
}

/// Dense vector for one question-document pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, DataError> {
        if values.is_empty() {
            return Err(DataError::EmptyEmbedding);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteEmbedding { index });
        }
        Ok(Self(values))
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = DataError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Output of K-means: per-item cluster ids plus the centroids they refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations_run: usize,
    pub converged: bool,
    /// Whether inputs were L2-normalized before clustering; centroids and
    /// inertia live in that geometry.
    pub normalized: bool,
    /// Inertia after every Lloyd update, in iteration order.
    #[serde(default)]
    pub inertia_history: Vec<f64>,
}

impl ClusterAssignment {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.assignments {
            sizes[c] += 1;
        }
        sizes
    }

    /// Item indices grouped by cluster, each group in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.k];
        for (i, &c) in self.assignments.iter().enumerate() {
            groups[c].push(i);
        }
        groups
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateRole {
    Generate,
    Read,
}

pub const QUESTION_SLOT: &str = "{question}";
pub const BACKGROUND_SLOT: &str = "{background}";
pub const DEMONSTRATIONS_SLOT: &str = "{demonstrations}";

/// A prompt body with `{question}`, `{background}` and `{demonstrations}`
/// placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub body: String,
    pub role: TemplateRole,
}

/// Values substituted into a template. Missing values render as "".
#[derive(Debug, Clone, Copy, Default)]
pub struct Slots<'a> {
    pub question: Option<&'a str>,
    pub background: Option<&'a str>,
    pub demonstrations: Option<&'a str>,
}

impl PromptTemplate {
    pub fn new(
        id: impl Into<String>,
        body: impl Into<String>,
        role: TemplateRole,
    ) -> Result<Self, DataError> {
        let t = Self {
            id: id.into(),
            body: body.into(),
            role,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let missing = |placeholder| DataError::MissingPlaceholder {
            id: self.id.clone(),
            role: self.role,
            placeholder,
        };
        if !self.body.contains(QUESTION_SLOT) {
            return Err(missing(QUESTION_SLOT));
        }
        if self.role == TemplateRole::Read && !self.body.contains(BACKGROUND_SLOT) {
            return Err(missing(BACKGROUND_SLOT));
        }
        Ok(())
    }

    /// Substitutes placeholders in a single left-to-right pass, so text
    /// spliced in is never itself scanned for placeholders.
    pub fn render(&self, slots: Slots<'_>) -> String {
        let mut out = String::with_capacity(self.body.len() + 64);
        let mut rest = self.body.as_str();
        while let Some(pos) = rest.find('{') {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            let hit = [
                (QUESTION_SLOT, slots.question),
                (BACKGROUND_SLOT, slots.background),
                (DEMONSTRATIONS_SLOT, slots.demonstrations),
            ]
            .into_iter()
            .find(|(slot, _)| tail.starts_with(slot));
            match hit {
                Some((slot, value)) => {
                    out.push_str(value.unwrap_or(""));
                    rest = &tail[slot.len()..];
                }
                None => {
                    out.push('{');
                    rest = &tail[1..];
                }
            }
        }
        out.push_str(rest);
        out
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.id, self.body)
    }
}

/// Scores for one evaluated record. Metrics that do not apply to the task
/// are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub recall_at_k: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
}

impl ExampleScores {
    pub fn empty(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            em: None,
            recall_at_k: BTreeMap::new(),
            answer_coverage: None,
            accuracy: None,
            f1: None,
            rouge_l: None,
        }
    }
}

/// Aggregated metrics for one run; every aggregate is the arithmetic mean of
/// the matching per-example values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset_id: String,
    pub n_examples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub recall_at_k: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
    /// Fact-check predictions that could not be mapped to a label.
    #[serde(default)]
    pub unmappable_predictions: usize,
    pub per_example: Vec<ExampleScores>,
}
