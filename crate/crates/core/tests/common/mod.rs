#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use roundtable_core::backend::parse::{extract_prediction, parse_addressees, parse_intent};
use roundtable_core::backend::{
    AgentReply, AgentSpec, Backend, BackendError, Backends, ScriptedProfile, TokenScheme, TurnKind, TurnRequest,
};
use roundtable_core::context::AgentView;
use roundtable_core::engine::{run_discussion, DiscussionRun, EngineOptions, Roster};
use roundtable_core::strategy::{Governance, Strategy, StrategyConfig};
use roundtable_core::tasks::{generate_ses, GeneratorParams, LabelSet, Scenario, Segment, TaskInstance};

pub const SCRIPTED: &str = "scripted";

/// Independent whitespace token count: number of maximal non-whitespace runs.
pub fn whitespace_oracle(text: &str) -> u64 {
    let mut count = 0;
    let mut in_word = false;
    for c in text.chars() {
        let ws = c.is_whitespace();
        if !ws && !in_word {
            count += 1;
        }
        in_word = !ws;
    }
    count
}

pub fn ses_tasks(n: usize, n_segments: usize, seed: u64) -> Vec<TaskInstance> {
    generate_ses(&GeneratorParams::ses(n, n_segments, 1, seed)).unwrap()
}

/// A task with `n` plain segments and no cues.
pub fn plain_task(n: usize, labels: &[&str]) -> TaskInstance {
    TaskInstance {
        id: "plain".into(),
        scenario: Scenario::Ses,
        question: "Which label?".into(),
        label_set: LabelSet::new(labels.iter().copied()),
        gold_label: labels[0].into(),
        segments: (1..=n)
            .map(|i| Segment { name: format!("s{i}"), text: format!("segment {i}"), relevance: None })
            .collect(),
    }
}

pub fn roster_for(task: &TaskInstance, strategy: &Strategy, backend: &str) -> Roster {
    let instructor = (strategy.governance == Governance::Centralized).then_some(backend);
    Roster::for_task(task, backend, instructor)
}

pub fn config(strategy: &str, max_rounds: u32, seed: u64) -> StrategyConfig {
    StrategyConfig::parse(strategy, max_rounds, seed).unwrap()
}

/// Runs `task` with reader-scripted agents.
pub fn run_scripted(task: &TaskInstance, cfg: StrategyConfig, profile: &ScriptedProfile) -> DiscussionRun {
    let roster = roster_for(task, &cfg.strategy, SCRIPTED);
    let backend = profile.backend_for(task, &roster, TokenScheme::Whitespace);
    let backends = Backends::new().bind(SCRIPTED, Arc::new(backend));
    run_discussion(task, cfg, &roster, &backends, &EngineOptions::default()).unwrap()
}

#[derive(Debug, Clone)]
pub struct Call {
    pub agent: String,
    pub kind: TurnKind,
    pub round: u32,
    pub view: AgentView,
    pub prompt: String,
    pub reprompt: bool,
}

/// Wraps a backend and records every request it sees.
pub struct Recorder {
    inner: Arc<dyn Backend>,
    pub calls: Mutex<Vec<Call>>,
}

impl Recorder {
    pub fn new(inner: Arc<dyn Backend>) -> Arc<Self> {
        Arc::new(Self { inner, calls: Mutex::new(Vec::new()) })
    }

    pub fn calls(&self) -> Vec<Call> {
        self.calls.lock().unwrap().clone()
    }

    pub fn discussion_calls(&self, round: u32) -> Vec<Call> {
        self.calls().into_iter().filter(|c| c.kind == TurnKind::Discussion && c.round == round).collect()
    }
}

impl Backend for Recorder {
    fn respond(&self, request: &TurnRequest<'_>) -> Result<AgentReply, BackendError> {
        self.calls.lock().unwrap().push(Call {
            agent: request.agent_id.to_string(),
            kind: request.kind,
            round: request.round,
            view: request.view.clone(),
            prompt: request.prompt.to_string(),
            reprompt: request.reprompt,
        });
        self.inner.respond(request)
    }

    fn token_scheme(&self) -> TokenScheme {
        self.inner.token_scheme()
    }
}

/// A backend whose reply text comes from a closure; fields are parsed with
/// the standard reply grammar and tokens counted by whitespace.
pub struct FnBackend<F>(pub F);

impl<F> Backend for FnBackend<F>
where
    F: Fn(&TurnRequest<'_>) -> String + Send + Sync,
{
    fn respond(&self, request: &TurnRequest<'_>) -> Result<AgentReply, BackendError> {
        let content = (self.0)(request);
        let mut reply = AgentReply {
            input_tokens: whitespace_oracle(request.prompt),
            output_tokens: whitespace_oracle(&content),
            ..AgentReply::default()
        };
        match request.kind {
            TurnKind::Discussion => {
                reply.prediction = extract_prediction(&content, request.label_set);
                if request.addressing {
                    reply.addressees = parse_addressees(&content).flatten();
                }
            }
            TurnKind::Intent => reply.wants_to_speak = parse_intent(&content),
            _ => {}
        }
        reply.content = content;
        Ok(reply)
    }

    fn token_scheme(&self) -> TokenScheme {
        TokenScheme::Whitespace
    }
}

pub fn bind(backend: Arc<dyn Backend>) -> Backends {
    Backends::new().bind(SCRIPTED, backend)
}

pub fn discussion_agents(n: usize) -> Vec<AgentSpec> {
    (1..=n).map(|i| AgentSpec::discussion(format!("a{i}"), format!("s{i}"), SCRIPTED)).collect()
}
