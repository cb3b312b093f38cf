//! Task schema and the JSON task-file loader.
//!
//! A task file looks like
//! `{"tasks":[{"id","scenario","question","label_set","gold_label","segments":[{"name","text","relevance"?}]}]}`.
//! Every invariant is checked at load time and reported with a JSON pointer.

mod baseline;
pub mod generate;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baseline::{baseline_agent_all, baseline_mv, merged_task, AGENT_ALL, MERGED_SEGMENT, MV};
pub use generate::{generate_dei, generate_ses, GenerateError, GeneratorParams, HINT_TAG, VERDICT_TAG};

/// Canonical labels for discharge-disposition tasks.
pub const PDDP_LABELS: [&str; 4] = ["expired", "extended care", "home with service", "home"];
/// Canonical labels for claim-verification tasks.
pub const SES_LABELS: [&str; 3] = ["supported", "refuting", "neutral"];
/// The five canonical context segments of a discharge summary, in schema order.
pub const DEI_SEGMENTS: [&str; 5] = ["BHC", "MSIP", "PR", "DM", "SH"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Distributed evidence integration: complementary fragments per agent.
    #[serde(rename = "DEI")]
    Dei,
    /// Structured evidence synthesis: a few agents hold pre-labeled relevant evidence.
    #[serde(rename = "SES")]
    Ses,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Dei => "DEI",
            Scenario::Ses => "SES",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relevance {
    Consistent,
    Inconsistent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<Relevance>,
}

/// An ordered set of canonical labels.
///
/// Matching is case-insensitive and ignores surrounding and repeated
/// whitespace; matches resolve to the canonical spelling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(Vec<String>);

impl LabelSet {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(labels.into_iter().map(Into::into).collect())
    }

    pub fn pddp() -> Self {
        Self::new(PDDP_LABELS)
    }

    pub fn ses() -> Self {
        Self::new(SES_LABELS)
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.iter().any(|l| l == label)
    }

    /// Resolves free text to its canonical label, if it names one.
    pub fn canonicalize(&self, text: &str) -> Option<&str> {
        let wanted = normalize(text);
        self.0.iter().find(|l| normalize(l) == wanted).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.0.iter().position(|l| l == label)
    }
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub scenario: Scenario,
    pub question: String,
    pub label_set: LabelSet,
    pub gold_label: String,
    pub segments: Vec<Segment>,
}

impl TaskInstance {
    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Checks the task invariants; the error path is relative to this task.
    pub fn validate(&self) -> Result<(), SchemaError> {
        self.validate_at("")
    }

    fn validate_at(&self, base: &str) -> Result<(), SchemaError> {
        let err = |path: String, message: String| Err(SchemaError { pointer: format!("{base}{path}"), message });
        if self.id.is_empty() {
            return err("/id".into(), "task id must not be empty".into());
        }
        if self.label_set.is_empty() {
            return err("/label_set".into(), "label set must not be empty".into());
        }
        let mut seen_labels = HashSet::new();
        for (i, label) in self.label_set.iter().enumerate() {
            if label.trim().is_empty() || !seen_labels.insert(normalize(label)) {
                return err(format!("/label_set/{i}"), format!("label {label:?} is empty or duplicated"));
            }
        }
        if !self.label_set.contains(&self.gold_label) {
            return err("/gold_label".into(), format!("gold label {:?} is not in the label set", self.gold_label));
        }
        if self.segments.len() < 2 {
            return err("/segments".into(), format!("need at least 2 segments, found {}", self.segments.len()));
        }
        let mut names = HashSet::new();
        for (i, seg) in self.segments.iter().enumerate() {
            if !names.insert(seg.name.as_str()) {
                return err(format!("/segments/{i}/name"), format!("duplicate segment name {:?}", seg.name));
            }
            match (self.scenario, seg.relevance) {
                (Scenario::Ses, None) => {
                    return err(format!("/segments/{i}/relevance"), "SES segments need a relevance tag".into())
                }
                (Scenario::Dei, Some(_)) => {
                    return err(format!("/segments/{i}/relevance"), "DEI segments carry no relevance tag".into())
                }
                _ => {}
            }
            if self.scenario == Scenario::Dei && !DEI_SEGMENTS.contains(&seg.name.as_str()) {
                return err(
                    format!("/segments/{i}/name"),
                    format!("{:?} is not one of {}", seg.name, DEI_SEGMENTS.join(", ")),
                );
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFile {
    pub tasks: Vec<TaskInstance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("schema error at {pointer}: {message}")]
pub struct SchemaError {
    /// JSON pointer to the offending value (empty string for the document root).
    pub pointer: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("failed to read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Loads and validates a task file.
pub fn load_tasks(path: impl AsRef<Path>) -> Result<Vec<TaskInstance>, LoadError> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.display().to_string(), source })?;
    Ok(parse_tasks(&text)?)
}

/// Parses and validates task-file JSON.
pub fn parse_tasks(json: &str) -> Result<Vec<TaskInstance>, SchemaError> {
    let value: serde_json::Value =
        serde_json::from_str(json).map_err(|e| SchemaError { pointer: String::new(), message: e.to_string() })?;
    let tasks = value
        .get("tasks")
        .and_then(|t| t.as_array())
        .ok_or_else(|| SchemaError { pointer: "/tasks".into(), message: "expected an array of tasks".into() })?;

    let mut out = Vec::with_capacity(tasks.len());
    let mut ids = HashSet::new();
    for (i, raw) in tasks.iter().enumerate() {
        let base = format!("/tasks/{i}");
        let task: TaskInstance = serde_json::from_value(raw.clone())
            .map_err(|e| SchemaError { pointer: field_pointer(&base, raw, &e), message: e.to_string() })?;
        task.validate_at(&base)?;
        if !ids.insert(task.id.clone()) {
            return Err(SchemaError {
                pointer: format!("{base}/id"),
                message: format!("duplicate task id {:?}", task.id),
            });
        }
        out.push(task);
    }
    Ok(out)
}

// serde_json does not report value paths, so point at the first missing field
// when that is the cause and fall back to the task itself.
fn field_pointer(base: &str, raw: &serde_json::Value, err: &serde_json::Error) -> String {
    let msg = err.to_string();
    if let Some(rest) = msg.strip_prefix("missing field `") {
        if let Some(field) = rest.split('`').next() {
            if raw.get(field).is_none() {
                return format!("{base}/{field}");
            }
        }
    }
    base.to_string()
}

/// Serializes tasks in the task-file layout.
pub fn tasks_to_json(tasks: &[TaskInstance]) -> String {
    let file = TaskFile { tasks: tasks.to_vec() };
    serde_json::to_string_pretty(&file).expect("task serialization is infallible")
}
