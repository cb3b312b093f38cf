//! Reference runs without discussion.
//!
//! * `Agent_all`: one agent reads every segment and answers once.
//! * `MV`: every segment agent answers once on its own; the final label is
//!   the majority vote of those answers.
//!
//! Both go through the regular engine as a one-round simultaneous
//! discussion, so their transcripts and token counts have the same shape as
//! any other run.

use crate::backend::{AgentSpec, Backends};
use crate::decision::{majority_vote, PredictionBoard};
use crate::engine::{run_discussion, DiscussionError, EngineOptions, Roster};
use crate::strategy::{Strategy, StrategyConfig};
use crate::transcript::{Termination, TranscriptDocument};

use super::{Segment, TaskInstance};

pub const AGENT_ALL: &str = "Agent_all";
pub const MV: &str = "MV";
/// Name of the merged segment the `Agent_all` agent holds.
pub const MERGED_SEGMENT: &str = "ALL";

fn one_round(seed: u64) -> StrategyConfig {
    let strategy: Strategy = "G1-P1-I1-C1".parse().expect("valid strategy literal");
    StrategyConfig::new(strategy, 1, seed).expect("valid config")
}

/// The task with all segments merged into one, each under its name.
pub fn merged_task(task: &TaskInstance) -> TaskInstance {
    let text = task.segments.iter().map(|s| format!("{}:\n{}", s.name, s.text)).collect::<Vec<_>>().join("\n\n");
    TaskInstance { segments: vec![Segment { name: MERGED_SEGMENT.into(), text, relevance: None }], ..task.clone() }
}

/// One agent, bound to `backend`, answers from the whole record.
pub fn baseline_agent_all(
    task: &TaskInstance,
    backend: &str,
    backends: &Backends,
    options: &EngineOptions,
    seed: u64,
) -> Result<TranscriptDocument, DiscussionError> {
    let merged = merged_task(task);
    let roster = Roster::new(vec![AgentSpec::discussion(AGENT_ALL, MERGED_SEGMENT, backend)], None)
        .map_err(DiscussionError::Setup)?;
    let run = run_discussion(&merged, one_round(seed), &roster, backends, options)?;
    Ok(run.into_document(task, AGENT_ALL, seed))
}

/// Every discussion agent of `roster` answers once, without seeing the others.
pub fn baseline_mv(
    task: &TaskInstance,
    roster: &Roster,
    backends: &Backends,
    options: &EngineOptions,
    seed: u64,
) -> Result<TranscriptDocument, DiscussionError> {
    let solo = Roster::new(roster.discussion().to_vec(), None).map_err(DiscussionError::Setup)?;
    let mut run = run_discussion(task, one_round(seed), &solo, backends, options)?;
    let board: PredictionBoard = run
        .transcript
        .messages()
        .filter_map(|m| m.prediction.as_ref().map(|p| (m.speaker_id.clone(), p.clone())))
        .collect();
    let label = majority_vote(&board, solo.discussion_ids(), &options.tie_rule)
        .map_err(|source| DiscussionError::Decision { round: 1, source, partial: Box::new(run.transcript.clone()) })?;
    run.outcome.final_label = label;
    run.outcome.termination = Termination::ForcedMajorityVote;
    Ok(run.into_document(task, MV, seed))
}
