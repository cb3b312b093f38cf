//! Versioned prompt templates with `{slot}` placeholders.
//!
//! A template set is a directory of UTF-8 text files (see `templates/v1`).
//! The built-in set is compiled in; experiments can pin another directory.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::context::AgentView;

/// Version tag of the compiled-in template set.
pub const BUILTIN_VERSION: &str = "v1";

/// Every file a template set must provide.
pub const TEMPLATE_NAMES: [&str; 12] = [
    "prompt",
    "preamble_discussion",
    "preamble_instructor",
    "task",
    "instruction_discussion",
    "instruction_discussion_addressed",
    "instruction_intent",
    "instruction_summary",
    "instruction_plan",
    "instruction_control",
    "instruction_final",
    "reprompt",
];

const BUILTIN: [(&str, &str); 12] = [
    ("prompt", include_str!("../../templates/v1/prompt.txt")),
    ("preamble_discussion", include_str!("../../templates/v1/preamble_discussion.txt")),
    ("preamble_instructor", include_str!("../../templates/v1/preamble_instructor.txt")),
    ("task", include_str!("../../templates/v1/task.txt")),
    ("instruction_discussion", include_str!("../../templates/v1/instruction_discussion.txt")),
    ("instruction_discussion_addressed", include_str!("../../templates/v1/instruction_discussion_addressed.txt")),
    ("instruction_intent", include_str!("../../templates/v1/instruction_intent.txt")),
    ("instruction_summary", include_str!("../../templates/v1/instruction_summary.txt")),
    ("instruction_plan", include_str!("../../templates/v1/instruction_plan.txt")),
    ("instruction_control", include_str!("../../templates/v1/instruction_control.txt")),
    ("instruction_final", include_str!("../../templates/v1/instruction_final.txt")),
    ("reprompt", include_str!("../../templates/v1/reprompt.txt")),
];

/// Rendered in place of an empty history.
pub const EMPTY_HISTORY: &str = "(none)";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {name:?} is missing")]
    Missing { name: String },
    #[error("template {name:?} uses unknown slot {{{slot}}}")]
    UnknownSlot { name: String, slot: String },
    #[error("template {name:?} has an unterminated slot at byte {offset}")]
    Unterminated { name: String, offset: usize },
    #[error("failed to read template {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    version: String,
    files: BTreeMap<String, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        let files = BUILTIN.iter().map(|(n, t)| (n.to_string(), trim_template(t))).collect();
        Self { version: BUILTIN_VERSION.to_string(), files }
    }

    /// Loads `<dir>/<name>.txt` for every required template; the directory
    /// name becomes the version tag.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let mut files = BTreeMap::new();
        for name in TEMPLATE_NAMES {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                return Err(TemplateError::Missing { name: name.to_string() });
            }
            let text = std::fs::read_to_string(&path)
                .map_err(|source| TemplateError::Io { path: path.display().to_string(), source })?;
            let text = trim_template(&text);
            fill(name, &text, &dummy_slots(name))?;
            files.insert(name.to_string(), text);
        }
        let version = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Self { version, files })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn raw(&self, name: &str) -> Option<&str> {
        self.files.get(name).map(String::as_str)
    }

    /// Renders template `name` with the given slot values.
    pub fn render(&self, name: &str, slots: &[(&str, &str)]) -> Result<String, TemplateError> {
        let template = self.raw(name).ok_or_else(|| TemplateError::Missing { name: name.to_string() })?;
        fill(name, template, slots)
    }

    /// The full prompt text for a view.
    pub fn render_view(&self, view: &AgentView) -> Result<String, TemplateError> {
        let history = if view.visible_history.is_empty() { EMPTY_HISTORY } else { view.visible_history.as_str() };
        self.render(
            "prompt",
            &[
                ("role_preamble", &view.role_preamble),
                ("task_statement", &view.task_statement),
                ("history", history),
                ("instruction", &view.turn_instruction),
            ],
        )
    }
}

/// Slots each template may use.
pub fn allowed_slots(name: &str) -> &'static [&'static str] {
    match name {
        "prompt" => &["role_preamble", "task_statement", "history", "instruction"],
        "preamble_discussion" => &["agent_id", "segment_name", "segment"],
        "preamble_instructor" => &["agent_id", "agents"],
        "task" => &["question", "labels"],
        "reprompt" => &[],
        _ => &["round", "labels", "peers", "agents"],
    }
}

fn dummy_slots(name: &str) -> Vec<(&'static str, &'static str)> {
    allowed_slots(name).iter().map(|s| (*s, "")).collect()
}

fn trim_template(text: &str) -> String {
    text.trim_end_matches(['\n', '\r']).to_string()
}

/// Single-pass substitution: slot values are inserted verbatim and never
/// re-scanned, so braces inside agent content are safe. `{{` and `}}`
/// escape literal braces.
fn fill(name: &str, template: &str, slots: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    let mut consumed = 0;
    while let Some(open) = rest.find(['{', '}']) {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            out.push_str(&tail[..1]);
            rest = &tail[2..];
            consumed += open + 2;
            continue;
        }
        if let Some(after) = tail.strip_prefix('}') {
            out.push('}');
            rest = after;
            consumed += open + 1;
            continue;
        }
        let close =
            tail.find('}').ok_or(TemplateError::Unterminated { name: name.to_string(), offset: consumed + open })?;
        let slot = &tail[1..close];
        let value = slots
            .iter()
            .find(|(k, _)| *k == slot)
            .map(|(_, v)| *v)
            .ok_or_else(|| TemplateError::UnknownSlot { name: name.to_string(), slot: slot.to_string() })?;
        out.push_str(value);
        rest = &tail[close + 1..];
        consumed += open + close + 1;
    }
    out.push_str(rest);
    Ok(out)
}
