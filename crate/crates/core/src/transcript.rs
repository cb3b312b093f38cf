//! Round-structured discussion records and their JSON form.

use std::fmt;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::backend::TokenScheme;
use crate::tasks::Scenario;

/// Who a message is meant for.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Addressees {
    All,
    /// Non-empty, excludes the speaker. Only produced under point-to-point interaction.
    Subset(Vec<String>),
}

impl Addressees {
    pub fn includes(&self, agent_id: &str) -> bool {
        match self {
            Addressees::All => true,
            Addressees::Subset(ids) => ids.iter().any(|id| id == agent_id),
        }
    }
}

impl fmt::Display for Addressees {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Addressees::All => f.write_str("all"),
            Addressees::Subset(ids) => f.write_str(&ids.join(", ")),
        }
    }
}

impl Serialize for Addressees {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Addressees::All => serializer.serialize_str("all"),
            Addressees::Subset(ids) => ids.serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for Addressees {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct AddrVisitor;

        impl<'de> Visitor<'de> for AddrVisitor {
            type Value = Addressees;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("\"all\" or a non-empty list of agent ids")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Addressees, E> {
                if v == "all" {
                    Ok(Addressees::All)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Addressees, A::Error> {
                let mut ids = Vec::new();
                while let Some(id) = seq.next_element::<String>()? {
                    ids.push(id);
                }
                if ids.is_empty() {
                    return Err(de::Error::invalid_length(0, &self));
                }
                Ok(Addressees::Subset(ids))
            }
        }

        deserializer.deserialize_any(AddrVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    /// A discussion turn; the only kind other agents see as dialogue.
    Discussion,
    /// Reply to a "do you want to speak" query under selective participation.
    SpeakIntent,
    SelfSummary,
    InstructorSummary,
    /// Instructor planning, continue/terminate rulings and forced final decisions.
    InstructorControl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    #[serde(rename = "round")]
    pub round_index: u32,
    #[serde(rename = "speaker")]
    pub speaker_id: String,
    pub addressees: Addressees,
    pub content: String,
    pub prediction: Option<String>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub purpose: Purpose,
}

impl Message {
    pub fn is_dialogue(&self) -> bool {
        self.purpose == Purpose::Discussion
    }

    /// Whether `viewer` may see this message as dialogue. The instructor sees everything.
    pub fn visible_to(&self, viewer: &str, viewer_is_instructor: bool) -> bool {
        self.is_dialogue() && (viewer_is_instructor || self.speaker_id == viewer || self.addressees.includes(viewer))
    }
}

/// Append-only record of a discussion, one inner list per round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    rounds: Vec<Vec<Message>>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rounds(&self) -> &[Vec<Message>] {
        &self.rounds
    }

    pub fn round(&self, index: u32) -> &[Message] {
        index.checked_sub(1).and_then(|i| self.rounds.get(i as usize)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn current_round(&self) -> u32 {
        self.rounds.len() as u32
    }

    pub fn open_round(&mut self) -> u32 {
        self.rounds.push(Vec::new());
        self.current_round()
    }

    /// Appends to the open round.
    ///
    /// # Panics
    ///
    /// If no round is open or the message is stamped with another round.
    pub fn push(&mut self, message: Message) {
        let current = self.current_round();
        assert!(current > 0, "no open round");
        assert_eq!(
            message.round_index, current,
            "message stamped for round {} in round {current}",
            message.round_index
        );
        self.rounds.last_mut().expect("open round").push(message);
    }

    pub fn messages(&self) -> impl Iterator<Item = &Message> {
        self.rounds.iter().flatten()
    }

    pub fn token_totals(&self) -> TokenTotals {
        self.messages().fold(TokenTotals::default(), |acc, m| TokenTotals {
            input_tokens: acc.input_tokens + m.input_tokens,
            output_tokens: acc.output_tokens + m.output_tokens,
        })
    }

    /// Checks that every message sits in the round it is stamped with.
    pub fn check_round_indices(&self) -> Result<(), String> {
        for (i, round) in self.rounds.iter().enumerate() {
            for m in round {
                if m.round_index as usize != i + 1 {
                    return Err(format!(
                        "message from {} stamped round {} sits in round {}",
                        m.speaker_id,
                        m.round_index,
                        i + 1
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Consensus,
    ForcedMajorityVote,
    InstructorDecision,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    #[serde(rename = "label")]
    pub final_label: String,
    #[serde(rename = "rounds")]
    pub rounds_used: u32,
    pub termination: Termination,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// The on-disk transcript consumed by reporting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptDocument {
    pub task_id: String,
    /// A lattice strategy string, or a baseline name.
    pub strategy: String,
    pub seed: u64,
    pub scenario: Scenario,
    pub gold_label: String,
    pub token_scheme: TokenScheme,
    pub rounds: Transcript,
    pub outcome: Outcome,
    /// Declared sums of the per-message token counts.
    pub totals: TokenTotals,
}

impl TranscriptDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("transcript serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
