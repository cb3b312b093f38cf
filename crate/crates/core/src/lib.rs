//! Multi-agent discussion strategies over distributed evidence.
//!
//! A discussion strategy is a point in the `G-P-I-C` grammar (governance,
//! participation, interaction, context). This crate validates strategies,
//! runs discussions among agents that each hold one segment of a task's
//! evidence, records transcripts with token counts, and reports accuracy
//! against token cost.
//!
//! * [`strategy`]: grammar, constraints and the nine valid strategies.
//! * [`tasks`]: task schema, synthetic generators and baselines.
//! * [`backend`]: scripted and HTTP agent backends, prompt templates.
//! * [`context`]: what each agent sees on each turn.
//! * [`engine`]: the round state machine.
//! * [`decision`]: consensus, majority vote and instructor rulings.
//! * [`transcript`]: transcript records and their JSON form.
//! * [`metrics`]: aggregation, TAR/NTAR and reports.

pub mod backend;
pub mod context;
pub mod decision;
pub mod engine;
pub mod metrics;
pub mod strategy;
pub mod tasks;
pub mod transcript;

pub use engine::{run_discussion, Discussion, DiscussionError, DiscussionRun, EngineOptions, Roster};
pub use strategy::{enumerate_valid_strategies, parse_strategy, validate_strategy, Strategy, StrategyConfig};
pub use tasks::{LabelSet, TaskInstance};
pub use transcript::{Outcome, Termination, Transcript, TranscriptDocument};
