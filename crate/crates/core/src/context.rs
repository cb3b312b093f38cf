//! Per-turn agent views under the three context strategies.
//!
//! History lines are rendered as `[round r] <speaker> (to <addressees>): <content>`.
//!
//! * full last-round log: the previous round's dialogue.
//! * self-summarized: the agent's summary of every round before the previous
//!   one, then the previous round's dialogue.
//! * instructor summary: the instructor's running summary.
//!
//! In every case the current round's earlier dialogue follows (it is empty
//! for simultaneous rounds, whose views are built before anyone speaks), and
//! point-to-point messages only reach their addressees.

use std::collections::BTreeMap;

use crate::backend::prompt::PromptTemplates;
use crate::backend::{AgentKind, AgentSpec, TurnKind};
use crate::engine::DiscussionState;
use crate::strategy::{ContextStrategy, InteractionPattern};
use crate::transcript::Message;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentView {
    pub role_preamble: String,
    pub task_statement: String,
    pub visible_history: String,
    pub turn_instruction: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct AgentSummary {
    latest: String,
    /// The summary before `latest`; it covers every round except the last completed one.
    lagged: String,
}

/// Stored summaries. Each entry is replaced once per round.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SummaryState {
    per_agent: BTreeMap<String, AgentSummary>,
    instructor: Option<String>,
}

impl SummaryState {
    pub fn for_strategy<S: AsRef<str>>(context: ContextStrategy, discussion_agents: &[S]) -> Self {
        match context {
            ContextStrategy::FullLastRoundLog => Self::default(),
            ContextStrategy::SelfSummarized => Self {
                per_agent: discussion_agents
                    .iter()
                    .map(|a| (a.as_ref().to_string(), AgentSummary::default()))
                    .collect(),
                instructor: None,
            },
            ContextStrategy::InstructorSummary => Self { per_agent: BTreeMap::new(), instructor: Some(String::new()) },
        }
    }

    /// The agent's most recent summary.
    pub fn self_summary(&self, agent_id: &str) -> Option<&str> {
        self.per_agent.get(agent_id).map(|s| s.latest.as_str())
    }

    /// The summary shown in the agent's discussion views.
    pub fn self_summary_for_view(&self, agent_id: &str) -> Option<&str> {
        self.per_agent.get(agent_id).map(|s| s.lagged.as_str())
    }

    pub fn replace_self_summary(&mut self, agent_id: &str, text: String) {
        if let Some(entry) = self.per_agent.get_mut(agent_id) {
            entry.lagged = std::mem::replace(&mut entry.latest, text);
        }
    }

    pub fn instructor_summary(&self) -> Option<&str> {
        self.instructor.as_deref()
    }

    pub fn replace_instructor_summary(&mut self, text: String) {
        if let Some(slot) = self.instructor.as_mut() {
            *slot = text;
        }
    }
}

pub fn render_message(m: &Message) -> String {
    format!("[round {}] {} (to {}): {}", m.round_index, m.speaker_id, m.addressees, m.content)
}

/// Renders the dialogue among `messages` that `viewer` may see.
pub fn render_visible<'a>(
    messages: impl IntoIterator<Item = &'a Message>,
    viewer: &str,
    is_instructor: bool,
) -> String {
    messages
        .into_iter()
        .filter(|m| m.visible_to(viewer, is_instructor))
        .map(render_message)
        .collect::<Vec<_>>()
        .join("\n")
}

fn join_parts(parts: &[&str]) -> String {
    parts.iter().filter(|p| !p.is_empty()).copied().collect::<Vec<_>>().join("\n")
}

/// Builds the view `agent` gets for a turn of the given kind in the state's open round.
pub fn build_view(
    agent: &AgentSpec,
    state: &DiscussionState<'_>,
    turn: TurnKind,
    templates: &PromptTemplates,
) -> AgentView {
    let round = state.transcript.current_round();
    let transcript = &state.transcript;
    let prev = round.saturating_sub(1);

    let visible_history = match (agent.kind, turn) {
        (AgentKind::Instructor, TurnKind::Summary) => join_parts(&[
            state.summaries.instructor_summary().unwrap_or(""),
            &render_visible(transcript.round(round), &agent.id, true),
        ]),
        (AgentKind::Instructor, _) => render_visible(transcript.messages(), &agent.id, true),
        (AgentKind::Discussion, TurnKind::Summary) => join_parts(&[
            state.summaries.self_summary(&agent.id).unwrap_or(""),
            &render_visible(transcript.round(round), &agent.id, false),
        ]),
        (AgentKind::Discussion, _) => {
            let current = render_visible(transcript.round(round), &agent.id, false);
            match state.config.context() {
                ContextStrategy::FullLastRoundLog => {
                    join_parts(&[&render_visible(transcript.round(prev), &agent.id, false), &current])
                }
                ContextStrategy::SelfSummarized => join_parts(&[
                    state.summaries.self_summary_for_view(&agent.id).unwrap_or(""),
                    &render_visible(transcript.round(prev), &agent.id, false),
                    &current,
                ]),
                ContextStrategy::InstructorSummary => {
                    join_parts(&[state.summaries.instructor_summary().unwrap_or(""), &current])
                }
            }
        }
    };

    let labels = state.task.label_set.as_slice().join("; ");
    let agents = state.roster.discussion_ids().join(", ");
    let peers =
        state.roster.discussion_ids().iter().filter(|id| **id != agent.id).cloned().collect::<Vec<_>>().join(", ");
    let round_text = round.to_string();

    let role_preamble = match agent.kind {
        AgentKind::Instructor => {
            render(templates, "preamble_instructor", &[("agent_id", &agent.id), ("agents", &agents)])
        }
        AgentKind::Discussion => {
            let name = agent.segment_ref.as_deref().unwrap_or("");
            let segment = state.task.segment(name).map(|s| s.text.as_str()).unwrap_or("");
            render(
                templates,
                "preamble_discussion",
                &[("agent_id", &agent.id), ("segment_name", name), ("segment", segment)],
            )
        }
    };
    let task_statement = render(templates, "task", &[("question", &state.task.question), ("labels", &labels)]);
    let addressed =
        turn == TurnKind::Discussion && state.config.interaction() == InteractionPattern::SelectivePointToPoint;
    let turn_instruction = render(
        templates,
        turn.instruction_template(addressed),
        &[("round", &round_text), ("labels", &labels), ("peers", &peers), ("agents", &agents)],
    );

    AgentView { role_preamble, task_statement, visible_history, turn_instruction }
}

fn render(templates: &PromptTemplates, name: &str, slots: &[(&str, &str)]) -> String {
    templates.render(name, slots).expect("template sets are checked for unknown slots when loaded")
}
