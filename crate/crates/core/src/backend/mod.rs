//! Agent backends.
//!
//! A backend answers one turn at a time. The engine hands it the agent's
//! [`AgentView`] together with the prompt rendered from that view; the
//! scripted backend reasons over the view, the HTTP backend sends the prompt.

pub mod http;
pub mod parse;
pub mod prompt;
pub mod scripted;
mod tokens;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::AgentView;
use crate::tasks::LabelSet;

pub use http::{HttpBackend, LlmBackendConfig, RetryPolicy};
pub use parse::extract_prediction;
pub use prompt::PromptTemplates;
pub use scripted::{ScriptedAgentConfig, ScriptedBackend, ScriptedInstructorConfig, ScriptedProfile};
pub use tokens::{count_tokens, TokenScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Discussion,
    Instructor,
}

/// One participant and the backend that answers for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: String,
    pub kind: AgentKind,
    /// Name of the task segment this agent holds; instructors hold none.
    pub segment_ref: Option<String>,
    pub backend: String,
}

impl AgentSpec {
    pub fn discussion(id: impl Into<String>, segment: impl Into<String>, backend: impl Into<String>) -> Self {
        Self { id: id.into(), kind: AgentKind::Discussion, segment_ref: Some(segment.into()), backend: backend.into() }
    }

    pub fn instructor(id: impl Into<String>, backend: impl Into<String>) -> Self {
        Self { id: id.into(), kind: AgentKind::Instructor, segment_ref: None, backend: backend.into() }
    }
}

/// What the agent is asked to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TurnKind {
    Discussion,
    /// "Do you want to speak this round?"
    Intent,
    Summary,
    /// Instructor chooses the round's speakers.
    Plan,
    /// Instructor rules CONTINUE or FINAL.
    Control,
    /// Instructor's forced decision at the round cap.
    Final,
}

impl TurnKind {
    pub fn instruction_template(self, addressed: bool) -> &'static str {
        match self {
            TurnKind::Discussion if addressed => "instruction_discussion_addressed",
            TurnKind::Discussion => "instruction_discussion",
            TurnKind::Intent => "instruction_intent",
            TurnKind::Summary => "instruction_summary",
            TurnKind::Plan => "instruction_plan",
            TurnKind::Control => "instruction_control",
            TurnKind::Final => "instruction_final",
        }
    }
}

/// Everything a backend sees for one call.
#[derive(Debug, Clone, Copy)]
pub struct TurnRequest<'a> {
    pub agent_id: &'a str,
    pub agent_kind: AgentKind,
    pub kind: TurnKind,
    pub round: u32,
    pub view: &'a AgentView,
    /// `view` rendered through the prompt templates.
    pub prompt: &'a str,
    pub label_set: &'a LabelSet,
    /// The discussion agents, in roster order.
    pub discussion_agents: &'a [String],
    /// True on point-to-point discussion turns, where a reply may name addressees.
    pub addressing: bool,
    /// True when re-asking after a reply that broke the reply grammar.
    pub reprompt: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentReply {
    pub content: String,
    pub prediction: Option<String>,
    pub wants_to_speak: Option<bool>,
    /// `None` means "everyone"; only meaningful on addressing turns.
    pub addressees: Option<Vec<String>>,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("backend {backend} failed after {attempts} attempt(s): {message}")]
pub struct BackendError {
    pub backend: String,
    pub attempts: u32,
    pub message: String,
}

pub trait Backend: Send + Sync {
    fn respond(&self, request: &TurnRequest<'_>) -> Result<AgentReply, BackendError>;

    /// How this backend's token counts were obtained.
    fn token_scheme(&self) -> TokenScheme;
}

/// Backends by binding id.
#[derive(Clone, Default)]
pub struct Backends {
    bound: BTreeMap<String, Arc<dyn Backend>>,
}

impl Backends {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(mut self, id: impl Into<String>, backend: Arc<dyn Backend>) -> Self {
        self.bound.insert(id.into(), backend);
        self
    }

    pub fn insert(&mut self, id: impl Into<String>, backend: Arc<dyn Backend>) {
        self.bound.insert(id.into(), backend);
    }

    pub fn get(&self, id: &str) -> Option<&Arc<dyn Backend>> {
        self.bound.get(id)
    }
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.bound.keys()).finish()
    }
}
