//! Deterministic rule-based agents for verification runs.
//!
//! A scripted agent reads its own segment for cue tokens (see
//! [`crate::tasks::read_cue`]) and the visible history for other agents'
//! `PREDICTION:` lines. Replies are a pure function of the request; token
//! counts are the configured local scheme applied to the rendered prompt
//! and to the reply content.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::parse::{extract_prediction, FINAL_MARKER, PREDICTION_MARKER, SPEAKERS_MARKER};
use super::{count_tokens, AgentKind, AgentReply, Backend, BackendError, TokenScheme, TurnKind, TurnRequest};
use crate::engine::Roster;
use crate::tasks::generate::{read_cue, CueStrength};
use crate::tasks::{merged_task, LabelSet, TaskInstance, AGENT_ALL};

/// Marker an informed agent puts in its turns.
pub const DECISIVE_MARKER: &str = "EVIDENCE: decisive";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersuasionRule {
    /// Follow the most common prediction among peers seen, counting one's own.
    AdoptMajoritySeen,
    /// Follow the first peer who claims decisive evidence.
    AdoptFirstInformed,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummarizerRule {
    /// Returns the summarization input verbatim.
    IdentityConcat,
    /// Keeps the first `n` characters of the input.
    TruncateToNChars(usize),
}

impl SummarizerRule {
    pub fn apply(self, input: &str) -> String {
        match self {
            SummarizerRule::IdentityConcat => input.to_string(),
            SummarizerRule::TruncateToNChars(n) => input.chars().take(n).collect(),
        }
    }
}

/// Answer to "do you want to speak this round?".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolunteerRule {
    Always,
    Never,
    /// Speak when no own prediction is visible yet, or when the belief moved since.
    #[default]
    OnChange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedAgentConfig {
    pub initial_label: String,
    /// Rounds during which the agent cannot be persuaded.
    pub stubbornness: u32,
    pub persuasion: PersuasionRule,
    /// Informed agents take their belief from a decisive cue in their segment.
    pub is_informed: bool,
    pub summarizer: SummarizerRule,
    #[serde(default)]
    pub volunteer: VolunteerRule,
    /// Addressees on point-to-point turns; `None` addresses everyone.
    #[serde(default)]
    pub addressing: Option<Vec<String>>,
}

impl ScriptedAgentConfig {
    /// An agent that holds `label` no matter what it hears.
    pub fn fixed(label: impl Into<String>) -> Self {
        Self {
            initial_label: label.into(),
            stubbornness: 0,
            persuasion: PersuasionRule::Never,
            is_informed: false,
            summarizer: SummarizerRule::IdentityConcat,
            volunteer: VolunteerRule::default(),
            addressing: None,
        }
    }

    /// An agent that reads its segment and never changes its mind.
    pub fn informed(fallback: impl Into<String>) -> Self {
        Self { is_informed: true, ..Self::fixed(fallback) }
    }

    /// An uninformed agent that starts at `label` and follows decisive evidence after `stubbornness` rounds.
    pub fn follower(label: impl Into<String>, stubbornness: u32) -> Self {
        Self { stubbornness, persuasion: PersuasionRule::AdoptFirstInformed, ..Self::fixed(label) }
    }

    /// Derives a config from a segment's cue: a decisive cue makes the agent
    /// informed and immovable, otherwise it starts at its hint (or the first
    /// label) and follows decisive evidence.
    pub fn reader(segment_text: &str, labels: &LabelSet, stubbornness: u32) -> Self {
        let fallback = labels.as_slice().first().cloned().unwrap_or_default();
        match read_cue(segment_text, labels) {
            Some((label, CueStrength::Decisive)) => Self::informed(label),
            Some((label, CueStrength::Hint)) => Self::follower(label, stubbornness),
            None => Self::follower(fallback, stubbornness),
        }
    }

    pub fn with_summarizer(mut self, summarizer: SummarizerRule) -> Self {
        self.summarizer = summarizer;
        self
    }

    pub fn with_volunteer(mut self, volunteer: VolunteerRule) -> Self {
        self.volunteer = volunteer;
        self
    }

    pub fn with_addressing(mut self, to: Vec<String>) -> Self {
        self.addressing = Some(to);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanRule {
    /// Every discussion agent, in roster order.
    #[default]
    Roster,
    /// Exactly this list, unchecked.
    Fixed(Vec<String>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlRule {
    /// Finalize on decisive evidence or unanimity, otherwise continue.
    #[default]
    Decisive,
    AlwaysContinue,
    /// Reply with this exact text.
    Fixed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedInstructorConfig {
    #[serde(default)]
    pub plan: PlanRule,
    #[serde(default)]
    pub control: ControlRule,
    #[serde(default = "default_summarizer")]
    pub summarizer: SummarizerRule,
}

fn default_summarizer() -> SummarizerRule {
    SummarizerRule::IdentityConcat
}

impl Default for ScriptedInstructorConfig {
    fn default() -> Self {
        Self { plan: PlanRule::default(), control: ControlRule::default(), summarizer: default_summarizer() }
    }
}

/// One backend serving any number of scripted agents, keyed by agent id.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    agents: BTreeMap<String, ScriptedAgentConfig>,
    instructor: ScriptedInstructorConfig,
    scheme: TokenScheme,
}

impl ScriptedBackend {
    /// # Panics
    ///
    /// If `scheme` is [`TokenScheme::ProviderReported`].
    pub fn new(scheme: TokenScheme) -> Self {
        assert!(count_tokens("", scheme).is_some(), "scripted agents need a locally countable token scheme");
        Self { agents: BTreeMap::new(), instructor: ScriptedInstructorConfig::default(), scheme }
    }

    pub fn with_agent(mut self, id: impl Into<String>, config: ScriptedAgentConfig) -> Self {
        self.agents.insert(id.into(), config);
        self
    }

    pub fn with_instructor(mut self, config: ScriptedInstructorConfig) -> Self {
        self.instructor = config;
        self
    }

    fn agent(&self, id: &str) -> Result<&ScriptedAgentConfig, BackendError> {
        self.agents.get(id).ok_or_else(|| BackendError {
            backend: "scripted".into(),
            attempts: 1,
            message: format!("no scripted config for agent {id}"),
        })
    }

    fn reply(&self, req: &TurnRequest<'_>, content: String) -> AgentReply {
        let count = |text: &str| count_tokens(text, self.scheme).expect("scheme checked in constructor");
        AgentReply { input_tokens: count(req.prompt), output_tokens: count(&content), content, ..AgentReply::default() }
    }

    fn discussion_agent(&self, req: &TurnRequest<'_>) -> Result<AgentReply, BackendError> {
        let cfg = self.agent(req.agent_id)?;
        let labels = req.label_set;
        let own_cue = read_cue(&req.view.role_preamble, labels);
        let decisive = match own_cue {
            Some((label, CueStrength::Decisive)) if cfg.is_informed => Some(label),
            _ => None,
        };
        let base = decisive.clone().unwrap_or_else(|| cfg.initial_label.clone());
        let seen = parse_history(&req.view.visible_history, labels);
        let own_last = seen.iter().rev().find(|m| m.speaker == req.agent_id).and_then(|m| m.prediction.clone());
        let current = own_last.clone().unwrap_or(base);
        let belief = if req.round > cfg.stubbornness {
            persuade(cfg.persuasion, &current, req.agent_id, &seen)
        } else {
            current
        };

        match req.kind {
            TurnKind::Discussion => {
                let content = if decisive.is_some() {
                    format!("My context settles this: {belief}. {DECISIVE_MARKER} {PREDICTION_MARKER} {belief}")
                } else if own_last.as_deref().is_some_and(|l| l != belief) {
                    format!("Having heard the others I now hold {belief}. {PREDICTION_MARKER} {belief}")
                } else {
                    format!("From my context I lean towards {belief}. {PREDICTION_MARKER} {belief}")
                };
                let mut reply = self.reply(req, content);
                reply.prediction = Some(belief);
                if req.addressing {
                    reply.addressees = cfg.addressing.clone();
                }
                Ok(reply)
            }
            TurnKind::Intent => {
                let speak = match cfg.volunteer {
                    VolunteerRule::Always => true,
                    VolunteerRule::Never => false,
                    VolunteerRule::OnChange => own_last.as_deref() != Some(belief.as_str()),
                };
                let mut reply = self.reply(req, format!("SPEAK: {}", if speak { "yes" } else { "no" }));
                reply.wants_to_speak = Some(speak);
                Ok(reply)
            }
            TurnKind::Summary => Ok(self.reply(req, cfg.summarizer.apply(&req.view.visible_history))),
            other => Err(BackendError {
                backend: "scripted".into(),
                attempts: 1,
                message: format!("discussion agent {} cannot take a {other:?} turn", req.agent_id),
            }),
        }
    }

    fn instructor(&self, req: &TurnRequest<'_>) -> Result<AgentReply, BackendError> {
        let cfg = &self.instructor;
        let content = match req.kind {
            TurnKind::Plan => {
                let speakers = match &cfg.plan {
                    PlanRule::Roster => req.discussion_agents.to_vec(),
                    PlanRule::Fixed(list) => list.clone(),
                };
                format!("{SPEAKERS_MARKER} {}", speakers.join(", "))
            }
            TurnKind::Control => match &cfg.control {
                ControlRule::Fixed(text) => text.clone(),
                ControlRule::AlwaysContinue => "CONTINUE".into(),
                ControlRule::Decisive => {
                    let seen = parse_history(&req.view.visible_history, req.label_set);
                    match settled_label(&seen, req.discussion_agents) {
                        Some(label) => format!("{FINAL_MARKER}{label}"),
                        None => "CONTINUE".into(),
                    }
                }
            },
            TurnKind::Final => {
                let seen = parse_history(&req.view.visible_history, req.label_set);
                format!("{FINAL_MARKER}{}", best_label(&seen, req.discussion_agents, req.label_set))
            }
            TurnKind::Summary => cfg.summarizer.apply(&req.view.visible_history),
            other => {
                return Err(BackendError {
                    backend: "scripted".into(),
                    attempts: 1,
                    message: format!("instructor cannot take a {other:?} turn"),
                })
            }
        };
        Ok(self.reply(req, content))
    }
}

/// How scripted agents are derived from a task: every discussion agent is a
/// [`ScriptedAgentConfig::reader`] of its segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedProfile {
    #[serde(default = "default_stubbornness")]
    pub stubbornness: u32,
    #[serde(default = "default_summarizer")]
    pub summarizer: SummarizerRule,
    #[serde(default)]
    pub volunteer: VolunteerRule,
    #[serde(default)]
    pub instructor: ScriptedInstructorConfig,
}

fn default_stubbornness() -> u32 {
    1
}

impl Default for ScriptedProfile {
    fn default() -> Self {
        Self {
            stubbornness: default_stubbornness(),
            summarizer: default_summarizer(),
            volunteer: VolunteerRule::default(),
            instructor: ScriptedInstructorConfig::default(),
        }
    }
}

impl ScriptedProfile {
    /// A backend serving `roster` on `task`, plus the `Agent_all` baseline agent.
    pub fn backend_for(&self, task: &TaskInstance, roster: &Roster, scheme: TokenScheme) -> ScriptedBackend {
        let labels = &task.label_set;
        let reader = |text: &str| {
            ScriptedAgentConfig::reader(text, labels, self.stubbornness)
                .with_summarizer(self.summarizer)
                .with_volunteer(self.volunteer)
        };
        let mut backend = ScriptedBackend::new(scheme).with_instructor(self.instructor.clone());
        for agent in roster.discussion() {
            let text = agent.segment_ref.as_deref().and_then(|s| task.segment(s)).map_or("", |s| s.text.as_str());
            backend = backend.with_agent(agent.id.clone(), reader(text));
        }
        let merged = merged_task(task);
        backend.with_agent(AGENT_ALL, reader(&merged.segments[0].text))
    }
}

impl Backend for ScriptedBackend {
    fn respond(&self, request: &TurnRequest<'_>) -> Result<AgentReply, BackendError> {
        match request.agent_kind {
            AgentKind::Discussion => self.discussion_agent(request),
            AgentKind::Instructor => self.instructor(request),
        }
    }

    fn token_scheme(&self) -> TokenScheme {
        self.scheme
    }
}

/// A dialogue line recovered from rendered history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeenMessage<'a> {
    pub round: u32,
    pub speaker: &'a str,
    pub content: &'a str,
    pub prediction: Option<String>,
}

impl SeenMessage<'_> {
    pub fn is_decisive(&self) -> bool {
        self.content.contains(DECISIVE_MARKER)
    }
}

/// Parses `[round r] <speaker> (to <...>): <content>` lines; other lines are skipped.
pub fn parse_history<'a>(text: &'a str, labels: &LabelSet) -> Vec<SeenMessage<'a>> {
    text.lines()
        .filter_map(|line| {
            let rest = line.strip_prefix("[round ")?;
            let (round, rest) = rest.split_once("] ")?;
            let (speaker, rest) = rest.split_once(" (to ")?;
            let (_, content) = rest.split_once("): ")?;
            Some(SeenMessage {
                round: round.parse().ok()?,
                speaker,
                content,
                prediction: extract_prediction(content, labels),
            })
        })
        .collect()
}

/// Latest prediction per speaker, in order of first appearance.
fn latest_by_speaker<'a>(seen: &'a [SeenMessage<'a>]) -> Vec<(&'a str, &'a str)> {
    let mut latest: Vec<(&str, &str)> = Vec::new();
    for m in seen {
        let Some(p) = m.prediction.as_deref() else { continue };
        match latest.iter_mut().find(|(s, _)| *s == m.speaker) {
            Some(entry) => entry.1 = p,
            None => latest.push((m.speaker, p)),
        }
    }
    latest
}

fn persuade(rule: PersuasionRule, current: &str, me: &str, seen: &[SeenMessage<'_>]) -> String {
    match rule {
        PersuasionRule::Never => current.to_string(),
        PersuasionRule::AdoptFirstInformed => seen
            .iter()
            .find(|m| m.speaker != me && m.is_decisive() && m.prediction.is_some())
            .and_then(|m| m.prediction.clone())
            .unwrap_or_else(|| current.to_string()),
        PersuasionRule::AdoptMajoritySeen => {
            let latest = latest_by_speaker(seen);
            let mut tally: Vec<(&str, usize)> = vec![(current, 1)];
            for (speaker, label) in latest {
                if speaker == me {
                    continue;
                }
                match tally.iter_mut().find(|(l, _)| *l == label) {
                    Some(e) => e.1 += 1,
                    None => tally.push((label, 1)),
                }
            }
            let own = tally[0].1;
            // strict majority over one's own count; earlier-seen labels win ties
            tally
                .iter()
                .filter(|(_, n)| *n > own)
                .max_by(|a, b| a.1.cmp(&b.1).then(std::cmp::Ordering::Greater))
                .map(|(l, _)| l.to_string())
                .unwrap_or_else(|| current.to_string())
        }
    }
}

fn settled_label(seen: &[SeenMessage<'_>], agents: &[String]) -> Option<String> {
    if let Some(m) = seen.iter().find(|m| m.is_decisive() && m.prediction.is_some()) {
        return m.prediction.clone();
    }
    let latest = latest_by_speaker(seen);
    let mut labels = agents.iter().map(|a| latest.iter().find(|(s, _)| s == a).map(|(_, l)| *l));
    let first = labels.next()??;
    labels.all(|l| l == Some(first)).then(|| first.to_string())
}

fn best_label(seen: &[SeenMessage<'_>], agents: &[String], labels: &LabelSet) -> String {
    if let Some(label) = settled_label(seen, agents) {
        return label;
    }
    let latest = latest_by_speaker(seen);
    let mut counts = vec![0usize; labels.len()];
    for (_, l) in &latest {
        if let Some(i) = labels.index_of(l) {
            counts[i] += 1;
        }
    }
    let best = counts.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))).map(|(i, _)| i).unwrap_or(0);
    labels.as_slice().get(best).cloned().unwrap_or_default()
}
