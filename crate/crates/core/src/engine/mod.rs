//! The discussion state machine.
//!
//! Each round is planned (who speaks, in what order, simultaneously or not),
//! executed (one backend call per speaker), and concluded (consensus or vote
//! under decentralized governance, an instructor ruling under centralized
//! governance, then any summaries the context strategy needs).

mod roster;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;
use tracing::{debug, info_span};

use crate::backend::parse::parse_speakers;
use crate::backend::{
    AgentReply, AgentSpec, BackendError, Backends, PromptTemplates, TokenScheme, TurnKind, TurnRequest,
};
use crate::context::{build_view, AgentView, SummaryState};
use crate::decision::{
    detect_consensus, instructor_rule, majority_vote, DecisionError, InstructorRuling, PredictionBoard, RuleError,
    TieRule,
};
use crate::strategy::{
    validate_strategy, ContextStrategy, Governance, InteractionPattern, Participation, StrategyConfig,
};
use crate::tasks::TaskInstance;
use crate::transcript::{Addressees, Message, Outcome, Purpose, Termination, Transcript, TranscriptDocument};

pub use roster::{Roster, INSTRUCTOR_ID};

/// Rounds in a row without a single speaker after which a decentralized
/// discussion is closed by majority vote.
pub const MAX_SILENT_ROUNDS: u32 = 2;

#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub templates: PromptTemplates,
    pub tie_rule: TieRule,
    /// Fan simultaneous turns out over the rayon pool.
    pub parallel: bool,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { templates: PromptTemplates::builtin(), tie_rule: TieRule::default(), parallel: true }
    }
}

/// Everything views are built from.
#[derive(Debug, Clone)]
pub struct DiscussionState<'a> {
    pub task: &'a TaskInstance,
    pub config: StrategyConfig,
    pub roster: &'a Roster,
    pub transcript: Transcript,
    pub summaries: SummaryState,
    pub board: PredictionBoard,
    silent_rounds: u32,
}

impl<'a> DiscussionState<'a> {
    pub fn new(task: &'a TaskInstance, config: StrategyConfig, roster: &'a Roster) -> Self {
        Self {
            task,
            summaries: SummaryState::for_strategy(config.context(), roster.discussion_ids()),
            config,
            roster,
            transcript: Transcript::new(),
            board: PredictionBoard::new(),
            silent_rounds: 0,
        }
    }
}

/// Who speaks in a round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundPlan {
    /// Speaking order for sequential rounds; simultaneous rounds append in roster order.
    pub speakers: Vec<String>,
    /// Every speaker's view is taken before anyone speaks.
    pub concurrent: bool,
}

#[derive(Debug, Error)]
pub enum DiscussionError {
    #[error("invalid discussion setup: {0}")]
    Setup(String),
    #[error("round {round}: {source}")]
    Backend { round: u32, source: BackendError, partial: Box<Transcript> },
    #[error("round {round}: protocol violation: {message}")]
    Protocol { round: u32, message: String, partial: Box<Transcript> },
    #[error("round {round}: {source}")]
    Decision { round: u32, source: DecisionError, partial: Box<Transcript> },
}

impl DiscussionError {
    /// The transcript up to the failure, when the discussion had started.
    pub fn partial_transcript(&self) -> Option<&Transcript> {
        match self {
            DiscussionError::Setup(_) => None,
            DiscussionError::Backend { partial, .. }
            | DiscussionError::Protocol { partial, .. }
            | DiscussionError::Decision { partial, .. } => Some(partial),
        }
    }
}

enum Fail {
    Backend(BackendError),
    Protocol(String),
    Decision(DecisionError),
}

impl From<BackendError> for Fail {
    fn from(e: BackendError) -> Self {
        Fail::Backend(e)
    }
}

/// A finished discussion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscussionRun {
    pub transcript: Transcript,
    pub outcome: Outcome,
    pub token_scheme: TokenScheme,
}

impl DiscussionRun {
    pub fn into_document(self, task: &TaskInstance, strategy: impl Into<String>, seed: u64) -> TranscriptDocument {
        TranscriptDocument {
            task_id: task.id.clone(),
            strategy: strategy.into(),
            seed,
            scenario: task.scenario,
            gold_label: task.gold_label.clone(),
            token_scheme: self.token_scheme,
            totals: self.transcript.token_totals(),
            rounds: self.transcript,
            outcome: self.outcome,
        }
    }
}

/// One discussion of one task under one strategy.
pub struct Discussion<'a> {
    state: DiscussionState<'a>,
    backends: &'a Backends,
    options: &'a EngineOptions,
    scheme: TokenScheme,
    rng: ChaCha8Rng,
}

impl<'a> Discussion<'a> {
    /// Checks the roster against the task and strategy and that every agent's backend is bound.
    pub fn new(
        task: &'a TaskInstance,
        config: StrategyConfig,
        roster: &'a Roster,
        backends: &'a Backends,
        options: &'a EngineOptions,
    ) -> Result<Self, DiscussionError> {
        let setup = |m: String| DiscussionError::Setup(m);
        validate_strategy(&config.strategy).map_err(|e| setup(e.to_string()))?;
        if config.max_rounds == 0 {
            return Err(setup("max_rounds must be at least 1".into()));
        }
        if roster.discussion().len() != task.segments.len() {
            return Err(setup(format!(
                "task {} has {} segments but the roster has {} discussion agents",
                task.id,
                task.segments.len(),
                roster.discussion().len()
            )));
        }
        let mut held = Vec::new();
        for agent in roster.discussion() {
            let seg = agent.segment_ref.as_deref().unwrap_or_default();
            if task.segment(seg).is_none() {
                return Err(setup(format!("agent {} holds unknown segment {seg}", agent.id)));
            }
            if held.contains(&seg) {
                return Err(setup(format!("segment {seg} is assigned twice")));
            }
            held.push(seg);
        }
        if config.governance() == Governance::Centralized && roster.instructor().is_none() {
            return Err(setup(format!("{} needs an instructor", config.strategy)));
        }
        let mut scheme = None;
        for agent in roster.all() {
            let backend = backends
                .get(&agent.backend)
                .ok_or_else(|| setup(format!("agent {} is bound to unknown backend {}", agent.id, agent.backend)))?;
            let s = backend.token_scheme();
            match scheme {
                None => scheme = Some(s),
                Some(prev) if prev != s => {
                    return Err(setup(format!("backends mix token schemes {prev} and {s}")));
                }
                Some(_) => {}
            }
        }
        let scheme = scheme.ok_or_else(|| setup("roster is empty".into()))?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { state: DiscussionState::new(task, config, roster), backends, options, scheme, rng })
    }

    pub fn state(&self) -> &DiscussionState<'a> {
        &self.state
    }

    pub fn token_scheme(&self) -> TokenScheme {
        self.scheme
    }

    /// The view `agent_id` would get for a turn of `kind` right now.
    pub fn view(&self, agent_id: &str, kind: TurnKind) -> Option<AgentView> {
        let agent = self.state.roster.get(agent_id)?;
        Some(build_view(agent, &self.state, kind, &self.options.templates))
    }

    /// Runs rounds until the discussion terminates.
    pub fn run(mut self) -> Result<DiscussionRun, DiscussionError> {
        loop {
            let plan = self.plan_round()?;
            self.execute_round(&plan)?;
            if let Some(outcome) = self.conclude_round()? {
                return Ok(DiscussionRun { transcript: self.state.transcript, outcome, token_scheme: self.scheme });
            }
        }
    }

    /// Opens the next round and decides who speaks in it.
    pub fn plan_round(&mut self) -> Result<RoundPlan, DiscussionError> {
        let round = self.state.transcript.open_round();
        let _span =
            info_span!("round", task = %self.state.task.id, strategy = %self.state.config.strategy, round).entered();
        let concurrent = self.state.config.interaction() == InteractionPattern::Simultaneous;
        let ids = self.state.roster.discussion_ids();
        let speakers = match self.state.config.participation() {
            Participation::Full => {
                let mut order = ids.to_vec();
                if self.state.config.interaction() == InteractionPattern::RandomSequential {
                    order.shuffle(&mut self.rng);
                }
                order
            }
            Participation::Selective => self.ask_intents().map_err(|f| self.fail(f))?,
            Participation::InstructorDecided => self.ask_plan().map_err(|f| self.fail(f))?,
        };
        debug!(?speakers, concurrent, "round planned");
        Ok(RoundPlan { speakers, concurrent })
    }

    /// Collects one discussion turn from every planned speaker.
    pub fn execute_round(&mut self, plan: &RoundPlan) -> Result<(), DiscussionError> {
        let result = if plan.concurrent { self.execute_concurrent(plan) } else { self.execute_sequential(plan) };
        result.map_err(|f| self.fail(f))
    }

    /// Decides whether the discussion ends after the open round and, if it
    /// continues, updates the summaries the context strategy keeps.
    pub fn conclude_round(&mut self) -> Result<Option<Outcome>, DiscussionError> {
        let result = match self.state.config.governance() {
            Governance::Decentralized => self.conclude_decentralized(),
            Governance::Centralized => self.conclude_centralized(),
        };
        result.map_err(|f| self.fail(f))
    }

    fn round(&self) -> u32 {
        self.state.transcript.current_round()
    }

    fn fail(&self, f: Fail) -> DiscussionError {
        let round = self.round();
        let partial = Box::new(self.state.transcript.clone());
        match f {
            Fail::Backend(source) => DiscussionError::Backend { round, source, partial },
            Fail::Protocol(message) => DiscussionError::Protocol { round, message, partial },
            Fail::Decision(source) => DiscussionError::Decision { round, source, partial },
        }
    }

    fn agent(&self, id: &str) -> &'a AgentSpec {
        self.state.roster.get(id).expect("ids come from the roster")
    }

    fn addressing(&self) -> bool {
        self.state.config.interaction() == InteractionPattern::SelectivePointToPoint
    }

    fn call(
        &self,
        agent: &AgentSpec,
        kind: TurnKind,
        view: &AgentView,
        reprompt: bool,
    ) -> Result<AgentReply, BackendError> {
        let templates = &self.options.templates;
        let mut view = view.clone();
        if reprompt {
            let note = templates.render("reprompt", &[]).expect("reprompt template has no slots");
            view.turn_instruction = format!("{}\n\n{note}", view.turn_instruction);
        }
        let prompt = templates.render_view(&view).expect("template sets are checked when loaded");
        let backend = self.backends.get(&agent.backend).expect("bindings are checked at setup");
        let request = TurnRequest {
            agent_id: &agent.id,
            agent_kind: agent.kind,
            kind,
            round: self.round(),
            view: &view,
            prompt: &prompt,
            label_set: &self.state.task.label_set,
            discussion_agents: self.state.roster.discussion_ids(),
            addressing: kind == TurnKind::Discussion && self.addressing(),
            reprompt,
        };
        backend.respond(&request)
    }

    /// First attempt for every job, fanned out when enabled. Results keep job order.
    fn call_all(&self, kind: TurnKind, jobs: &[(&AgentSpec, AgentView)]) -> Vec<Result<AgentReply, BackendError>> {
        if self.options.parallel && jobs.len() > 1 {
            jobs.par_iter().map(|(agent, view)| self.call(agent, kind, view, false)).collect()
        } else {
            jobs.iter().map(|(agent, view)| self.call(agent, kind, view, false)).collect()
        }
    }

    fn views_for(&self, ids: &[String], kind: TurnKind) -> Vec<(&'a AgentSpec, AgentView)> {
        ids.iter()
            .map(|id| {
                let agent = self.agent(id);
                (agent, build_view(agent, &self.state, kind, &self.options.templates))
            })
            .collect()
    }

    /// Re-asks once when `accept` rejects the first reply; token counts of both attempts are kept.
    fn with_reprompt<T>(
        &self,
        agent: &AgentSpec,
        kind: TurnKind,
        view: &AgentView,
        first: AgentReply,
        accept: impl Fn(&AgentReply) -> Result<T, String>,
    ) -> Result<(AgentReply, T, u64, u64), Fail> {
        let (mut input, mut output) = (first.input_tokens, first.output_tokens);
        if let Ok(value) = accept(&first) {
            return Ok((first, value, input, output));
        }
        debug!(agent = %agent.id, ?kind, "reprompting");
        let second = self.call(agent, kind, view, true)?;
        input += second.input_tokens;
        output += second.output_tokens;
        match accept(&second) {
            Ok(value) => Ok((second, value, input, output)),
            Err(why) => Err(Fail::Protocol(format!("{} after a reprompt: {why}", agent.id))),
        }
    }

    fn message(&self, speaker: &str, purpose: Purpose, content: String, input: u64, output: u64) -> Message {
        Message {
            round_index: self.round(),
            speaker_id: speaker.to_string(),
            addressees: Addressees::All,
            content,
            prediction: None,
            input_tokens: input,
            output_tokens: output,
            purpose,
        }
    }

    fn ask_intents(&mut self) -> Result<Vec<String>, Fail> {
        let ids = self.state.roster.discussion_ids();
        let jobs = self.views_for(ids, TurnKind::Intent);
        let replies = self.call_all(TurnKind::Intent, &jobs);
        let mut speakers = Vec::new();
        for ((agent, view), reply) in jobs.iter().zip(replies) {
            let (reply, speak, input, output) = self.with_reprompt(agent, TurnKind::Intent, view, reply?, |r| {
                r.wants_to_speak.ok_or_else(|| "no SPEAK: yes|no line".to_string())
            })?;
            let msg = self.message(&agent.id, Purpose::SpeakIntent, reply.content, input, output);
            self.state.transcript.push(msg);
            if speak {
                speakers.push(agent.id.clone());
            }
        }
        Ok(speakers)
    }

    fn ask_plan(&mut self) -> Result<Vec<String>, Fail> {
        let instructor = self.state.roster.instructor().expect("checked at setup");
        let view = build_view(instructor, &self.state, TurnKind::Plan, &self.options.templates);
        let first = self.call(instructor, TurnKind::Plan, &view, false)?;
        let ids = self.state.roster.discussion_ids();
        let (reply, speakers, input, output) = self.with_reprompt(instructor, TurnKind::Plan, &view, first, |r| {
            parse_speakers(&r.content).ok_or_else(|| "no SPEAKERS: line".to_string())
        })?;
        let msg = self.message(&instructor.id, Purpose::InstructorControl, reply.content, input, output);
        self.state.transcript.push(msg);
        let mut seen = Vec::new();
        for s in &speakers {
            if !ids.contains(s) {
                return Err(Fail::Protocol(format!("instructor selected unknown agent {s}")));
            }
            if seen.contains(&s) {
                return Err(Fail::Protocol(format!("instructor selected {s} twice")));
            }
            seen.push(s);
        }
        Ok(speakers)
    }

    fn resolve_addressees(&self, speaker: &str, named: Option<&Vec<String>>) -> Result<Addressees, String> {
        let Some(named) = named else { return Ok(Addressees::All) };
        if named.is_empty() {
            return Err("empty addressee list".into());
        }
        let ids = self.state.roster.discussion_ids();
        for (i, id) in named.iter().enumerate() {
            if id == speaker {
                return Err("addressed itself".into());
            }
            if !ids.contains(id) {
                return Err(format!("addressed unknown agent {id}"));
            }
            if named[..i].contains(id) {
                return Err(format!("addressed {id} twice"));
            }
        }
        Ok(Addressees::Subset(named.clone()))
    }

    fn discussion_message(&self, agent: &AgentSpec, view: &AgentView, first: AgentReply) -> Result<Message, Fail> {
        let labels = &self.state.task.label_set;
        let addressing = self.addressing();
        let (reply, (label, addressees), input, output) =
            self.with_reprompt(agent, TurnKind::Discussion, view, first, |r| {
                let label = r
                    .prediction
                    .as_deref()
                    .and_then(|p| labels.canonicalize(p))
                    .ok_or_else(|| "no parseable prediction".to_string())?;
                let to = if addressing {
                    self.resolve_addressees(&agent.id, r.addressees.as_ref())?
                } else {
                    Addressees::All
                };
                Ok((label.to_string(), to))
            })?;
        Ok(Message {
            round_index: self.round(),
            speaker_id: agent.id.clone(),
            addressees,
            content: reply.content,
            prediction: Some(label),
            input_tokens: input,
            output_tokens: output,
            purpose: Purpose::Discussion,
        })
    }

    fn record(&mut self, msg: Message) {
        let label = msg.prediction.clone().expect("discussion messages carry a prediction");
        self.state.board.record(&msg.speaker_id, &label, msg.round_index);
        self.state.transcript.push(msg);
    }

    fn execute_sequential(&mut self, plan: &RoundPlan) -> Result<(), Fail> {
        for id in &plan.speakers {
            let agent = self.agent(id);
            let view = build_view(agent, &self.state, TurnKind::Discussion, &self.options.templates);
            let reply = self.call(agent, TurnKind::Discussion, &view, false)?;
            let msg = self.discussion_message(agent, &view, reply)?;
            self.record(msg);
        }
        Ok(())
    }

    fn execute_concurrent(&mut self, plan: &RoundPlan) -> Result<(), Fail> {
        let roster = self.state.roster;
        let mut order = plan.speakers.clone();
        order.sort_by_key(|id| roster.index_of(id));
        let jobs = self.views_for(&order, TurnKind::Discussion);
        let replies = self.call_all(TurnKind::Discussion, &jobs);
        let mut messages = Vec::with_capacity(jobs.len());
        for ((agent, view), reply) in jobs.iter().zip(replies) {
            messages.push(self.discussion_message(agent, view, reply?)?);
        }
        for msg in messages {
            self.record(msg);
        }
        Ok(())
    }

    fn spoke_this_round(&self) -> bool {
        self.state.transcript.round(self.round()).iter().any(Message::is_dialogue)
    }

    fn conclude_decentralized(&mut self) -> Result<Option<Outcome>, Fail> {
        let round = self.round();
        let ids = self.state.roster.discussion_ids();
        self.state.silent_rounds = if self.spoke_this_round() { 0 } else { self.state.silent_rounds + 1 };
        if let Some(label) = detect_consensus(&self.state.board, ids) {
            return Ok(Some(Outcome { final_label: label, rounds_used: round, termination: Termination::Consensus }));
        }
        if round >= self.state.config.max_rounds || self.state.silent_rounds >= MAX_SILENT_ROUNDS {
            let label = majority_vote(&self.state.board, ids, &self.options.tie_rule).map_err(Fail::Decision)?;
            return Ok(Some(Outcome {
                final_label: label,
                rounds_used: round,
                termination: Termination::ForcedMajorityVote,
            }));
        }
        if self.state.config.context() == ContextStrategy::SelfSummarized {
            self.self_summaries()?;
        }
        Ok(None)
    }

    fn self_summaries(&mut self) -> Result<(), Fail> {
        let jobs = self.views_for(self.state.roster.discussion_ids(), TurnKind::Summary);
        let replies = self.call_all(TurnKind::Summary, &jobs);
        for ((agent, _), reply) in jobs.iter().zip(replies) {
            let reply = reply?;
            let msg = self.message(
                &agent.id,
                Purpose::SelfSummary,
                reply.content.clone(),
                reply.input_tokens,
                reply.output_tokens,
            );
            self.state.transcript.push(msg);
            self.state.summaries.replace_self_summary(&agent.id, reply.content);
        }
        Ok(())
    }

    fn conclude_centralized(&mut self) -> Result<Option<Outcome>, Fail> {
        let round = self.round();
        let instructor = self.state.roster.instructor().expect("checked at setup");
        let mut messages = Vec::new();
        let ruling =
            instructor_rule(round, self.state.config.max_rounds, &self.state.task.label_set, |kind, reprompt| {
                let view = build_view(instructor, &self.state, kind, &self.options.templates);
                let reply = self.call(instructor, kind, &view, reprompt)?;
                messages.push(self.message(
                    &instructor.id,
                    Purpose::InstructorControl,
                    reply.content.clone(),
                    reply.input_tokens,
                    reply.output_tokens,
                ));
                Ok::<_, BackendError>(reply.content)
            });
        for msg in messages {
            self.state.transcript.push(msg);
        }
        match ruling {
            Ok(InstructorRuling::Terminate(label)) => Ok(Some(Outcome {
                final_label: label,
                rounds_used: round,
                termination: Termination::InstructorDecision,
            })),
            Ok(InstructorRuling::Continue) => {
                if self.state.config.context() == ContextStrategy::InstructorSummary {
                    let view = build_view(instructor, &self.state, TurnKind::Summary, &self.options.templates);
                    let reply = self.call(instructor, TurnKind::Summary, &view, false)?;
                    let msg = self.message(
                        &instructor.id,
                        Purpose::InstructorSummary,
                        reply.content.clone(),
                        reply.input_tokens,
                        reply.output_tokens,
                    );
                    self.state.transcript.push(msg);
                    self.state.summaries.replace_instructor_summary(reply.content);
                }
                Ok(None)
            }
            Err(RuleError::Backend(e)) => Err(Fail::Backend(e)),
            Err(RuleError::Protocol { reply }) => Err(Fail::Protocol(format!(
                "{} after a reprompt: {reply:?} is neither CONTINUE nor FINAL:<label>",
                instructor.id
            ))),
        }
    }
}

/// Runs one discussion to completion.
pub fn run_discussion(
    task: &TaskInstance,
    config: StrategyConfig,
    roster: &Roster,
    backends: &Backends,
    options: &EngineOptions,
) -> Result<DiscussionRun, DiscussionError> {
    Discussion::new(task, config, roster, backends, options)?.run()
}
