//! Consensus detection, majority voting and instructor rulings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::parse::parse_control;
use crate::backend::TurnKind;
use crate::tasks::LabelSet;

/// Each discussion agent's most recent prediction and the round it was made in.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionBoard {
    entries: BTreeMap<String, (String, u32)>,
}

impl PredictionBoard {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a prediction, replacing any earlier one from the same agent.
    pub fn record(&mut self, agent_id: &str, label: &str, round: u32) {
        self.entries.insert(agent_id.to_string(), (label.to_string(), round));
    }

    pub fn get(&self, agent_id: &str) -> Option<&str> {
        self.entries.get(agent_id).map(|(l, _)| l.as_str())
    }

    pub fn round_of(&self, agent_id: &str) -> Option<u32> {
        self.entries.get(agent_id).map(|(_, r)| *r)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

impl<A: Into<String>, L: Into<String>> FromIterator<(A, L)> for PredictionBoard {
    fn from_iter<T: IntoIterator<Item = (A, L)>>(iter: T) -> Self {
        let entries = iter.into_iter().map(|(a, l)| (a.into(), (l.into(), 1))).collect();
        Self { entries }
    }
}

/// The shared label iff every roster agent has predicted and all agree.
pub fn detect_consensus<S: AsRef<str>>(board: &PredictionBoard, roster: &[S]) -> Option<String> {
    let mut labels = roster.iter().map(|id| board.get(id.as_ref()));
    let first = labels.next()??;
    for label in labels {
        if label? != first {
            return None;
        }
    }
    Some(first.to_string())
}

/// How to break a tie between equally popular labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// The tied label whose first supporter appears earliest in the roster.
    #[default]
    LowestRosterIndex,
    /// The tied label listed first in the given label order.
    LabelOrder(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecisionError {
    #[error("no roster agent has made a prediction")]
    NoPredictions,
}

/// Modal label over the roster's predictions; agents without one abstain.
pub fn majority_vote<S: AsRef<str>>(
    board: &PredictionBoard,
    roster: &[S],
    tie_rule: &TieRule,
) -> Result<String, DecisionError> {
    // label -> (votes, roster index of its first supporter)
    let mut tally: Vec<(&str, usize, usize)> = Vec::new();
    for (idx, id) in roster.iter().enumerate() {
        let Some(label) = board.get(id.as_ref()) else { continue };
        match tally.iter_mut().find(|(l, _, _)| *l == label) {
            Some(entry) => entry.1 += 1,
            None => tally.push((label, 1, idx)),
        }
    }
    let top = tally.iter().map(|(_, n, _)| *n).max().ok_or(DecisionError::NoPredictions)?;
    let tied = tally.iter().filter(|(_, n, _)| *n == top);
    let winner = match tie_rule {
        TieRule::LowestRosterIndex => tied.min_by_key(|(_, _, first)| *first),
        TieRule::LabelOrder(order) => {
            tied.min_by_key(|(l, _, first)| (order.iter().position(|o| o == l).unwrap_or(usize::MAX), *first))
        }
    };
    Ok(winner.expect("at least one label has the top count").0.to_string())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InstructorRuling {
    Continue,
    Terminate(String),
}

#[derive(Debug, Error)]
pub enum RuleError<E> {
    #[error("instructor reply {reply:?} is neither CONTINUE nor FINAL:<label>")]
    Protocol { reply: String },
    #[error(transparent)]
    Backend(E),
}

/// Asks the instructor whether to continue and forces a decision at the cap.
///
/// `ask(kind, reprompt)` performs one instructor call and returns its reply
/// text; `kind` is [`TurnKind::Control`] for the regular ruling and
/// [`TurnKind::Final`] for the forced decision. An unparseable reply is
/// re-asked once with `reprompt = true`.
pub fn instructor_rule<E>(
    round: u32,
    max_rounds: u32,
    labels: &LabelSet,
    mut ask: impl FnMut(TurnKind, bool) -> Result<String, E>,
) -> Result<InstructorRuling, RuleError<E>> {
    let ruling = ask_parsed(TurnKind::Control, labels, &mut ask, Some)?;
    match ruling {
        InstructorRuling::Continue if round >= max_rounds => {
            let label = ask_parsed(TurnKind::Final, labels, &mut ask, |r| match r {
                InstructorRuling::Terminate(l) => Some(l),
                InstructorRuling::Continue => None,
            })?;
            Ok(InstructorRuling::Terminate(label))
        }
        other => Ok(other),
    }
}

fn ask_parsed<E, T>(
    kind: TurnKind,
    labels: &LabelSet,
    ask: &mut impl FnMut(TurnKind, bool) -> Result<String, E>,
    accept: impl Fn(InstructorRuling) -> Option<T>,
) -> Result<T, RuleError<E>> {
    let mut reply = String::new();
    for reprompt in [false, true] {
        reply = ask(kind, reprompt).map_err(RuleError::Backend)?;
        if let Some(value) = parse_control(&reply, labels).and_then(&accept) {
            return Ok(value);
        }
    }
    Err(RuleError::Protocol { reply })
}
