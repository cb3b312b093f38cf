//! Token accounting, aggregation and the token-accuracy ratio.
//!
//! `TAR = Acc / (α·#I + β·#O)` with accuracy in percentage points (58.8,
//! not 0.588) and #I/#O the mean input/output tokens per run. NTAR divides
//! each strategy's TAR by the largest TAR in the same report, so NTAR values
//! from different reports are not comparable.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::TokenScheme;
use crate::strategy::enumerate_valid_strategies;
use crate::tasks::{Scenario, AGENT_ALL, MV};
use crate::transcript::TranscriptDocument;

pub use report::{emit_report, report_rows, ReportFormat, ReportOptions, ReportRow, CSV_COLUMNS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("degenerate TAR: {0}")]
    Degenerate(String),
    #[error("strategy {strategy} mixes token schemes {first} and {second}")]
    MixedScheme { strategy: String, first: TokenScheme, second: TokenScheme },
    #[error("invalid TAR weights: alpha and beta must be positive and finite")]
    InvalidParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("transcript {task_id} ({strategy}): {message}")]
pub struct ConservationError {
    pub task_id: String,
    pub strategy: String,
    pub message: String,
}

/// One finished run, as counted for reporting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: String,
    pub strategy: String,
    pub scenario: Scenario,
    pub correct: bool,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub rounds: u32,
    /// Discussion messages in the run; differs from `rounds` for one-round baselines.
    pub turns: u32,
    pub token_scheme: TokenScheme,
}

impl RunRecord {
    /// Recounts a transcript and checks it against its declared totals.
    pub fn from_document(doc: &TranscriptDocument) -> Result<Self, ConservationError> {
        let fail = |message: String| ConservationError {
            task_id: doc.task_id.clone(),
            strategy: doc.strategy.clone(),
            message,
        };
        doc.rounds.check_round_indices().map_err(fail)?;
        let counted = doc.rounds.token_totals();
        if counted != doc.totals {
            return Err(fail(format!(
                "declared totals {}/{} differ from the message sums {}/{}",
                doc.totals.input_tokens, doc.totals.output_tokens, counted.input_tokens, counted.output_tokens
            )));
        }
        let rounds = doc.outcome.rounds_used;
        if rounds == 0 || rounds as usize != doc.rounds.rounds().len() {
            return Err(fail(format!(
                "outcome claims {rounds} rounds but the transcript has {}",
                doc.rounds.rounds().len()
            )));
        }
        Ok(Self {
            task_id: doc.task_id.clone(),
            strategy: doc.strategy.clone(),
            scenario: doc.scenario,
            correct: doc.outcome.final_label == doc.gold_label,
            input_tokens: counted.input_tokens,
            output_tokens: counted.output_tokens,
            rounds,
            turns: doc.rounds.messages().filter(|m| m.is_dialogue()).count() as u32,
            token_scheme: doc.token_scheme,
        })
    }
}

/// Per-run values kept for the optional per-run TAR column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSample {
    pub correct: bool,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMetrics {
    pub strategy: String,
    /// Percentage in `[0, 100]`.
    pub accuracy: f64,
    pub mean_input_tokens: f64,
    pub mean_output_tokens: f64,
    pub mean_rounds: f64,
    pub mean_turns: f64,
    pub n: usize,
    pub token_scheme: TokenScheme,
    /// Set when every run in the group has the same scenario.
    pub scenario: Option<Scenario>,
    pub samples: Vec<RunSample>,
}

impl AggregateMetrics {
    /// Whether this row is one of the nine discussion strategies.
    pub fn is_lattice_strategy(&self) -> bool {
        lattice_position(&self.strategy).is_some()
    }
}

fn lattice_position(strategy: &str) -> Option<usize> {
    enumerate_valid_strategies().iter().position(|s| s.to_string() == strategy)
}

/// Report order: lattice order, then `Agent_all`, `MV`, then anything else by name.
fn sort_key(strategy: &str) -> (usize, String) {
    let lattice = enumerate_valid_strategies().len();
    let rank = match strategy {
        s if lattice_position(s).is_some() => lattice_position(s).unwrap_or_default(),
        AGENT_ALL => lattice,
        MV => lattice + 1,
        _ => lattice + 2,
    };
    (rank, strategy.to_string())
}

/// Groups records by strategy and averages them.
pub fn aggregate(records: &[RunRecord]) -> Result<Vec<AggregateMetrics>, MetricsError> {
    let mut groups: BTreeMap<(usize, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(sort_key(&r.strategy)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((_, strategy), runs)| {
            let first = runs[0].token_scheme;
            if let Some(other) = runs.iter().map(|r| r.token_scheme).find(|s| *s != first) {
                return Err(MetricsError::MixedScheme { strategy, first, second: other });
            }
            let n = runs.len();
            let nf = n as f64;
            let correct = runs.iter().filter(|r| r.correct).count();
            let scenario = Some(runs[0].scenario).filter(|s| runs.iter().all(|r| r.scenario == *s));
            Ok(AggregateMetrics {
                strategy,
                accuracy: 100.0 * correct as f64 / nf,
                mean_input_tokens: runs.iter().map(|r| r.input_tokens as f64).sum::<f64>() / nf,
                mean_output_tokens: runs.iter().map(|r| r.output_tokens as f64).sum::<f64>() / nf,
                mean_rounds: runs.iter().map(|r| r.rounds as f64).sum::<f64>() / nf,
                mean_turns: runs.iter().map(|r| r.turns as f64).sum::<f64>() / nf,
                n,
                token_scheme: first,
                scenario,
                samples: runs
                    .iter()
                    .map(|r| RunSample {
                        correct: r.correct,
                        input_tokens: r.input_tokens,
                        output_tokens: r.output_tokens,
                    })
                    .collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TarParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for TarParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 4.0 }
    }
}

impl TarParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, MetricsError> {
        let ok = |w: f64| w.is_finite() && w > 0.0;
        if ok(alpha) && ok(beta) {
            Ok(Self { alpha, beta })
        } else {
            Err(MetricsError::InvalidParams)
        }
    }
}

/// `accuracy / (α·mean_input + β·mean_output)`, accuracy in percentage points.
pub fn compute_tar(accuracy: f64, mean_input: f64, mean_output: f64, params: TarParams) -> Result<f64, MetricsError> {
    let denominator = params.alpha * mean_input + params.beta * mean_output;
    if denominator.is_nan() || denominator <= 0.0 {
        return Err(MetricsError::Degenerate(format!(
            "no tokens were counted (#I = {mean_input}, #O = {mean_output})"
        )));
    }
    Ok(accuracy / denominator)
}

/// Divides every TAR by the largest one.
pub fn compute_ntar<K: Ord + Clone>(tars: &BTreeMap<K, f64>) -> Result<BTreeMap<K, f64>, MetricsError> {
    let max = tars.values().copied().fold(0.0_f64, f64::max);
    if max.is_nan() || max <= 0.0 {
        return Err(MetricsError::Degenerate("the largest TAR is zero".into()));
    }
    Ok(tars.iter().map(|(k, t)| (k.clone(), t / max)).collect())
}

/// Mean over runs of each run's own TAR, with a run's accuracy being 100 or 0.
pub fn per_run_mean_tar(samples: &[RunSample], params: TarParams) -> Option<f64> {
    let tars: Option<Vec<f64>> = samples
        .iter()
        .map(|s| {
            let acc = if s.correct { 100.0 } else { 0.0 };
            compute_tar(acc, s.input_tokens as f64, s.output_tokens as f64, params).ok()
        })
        .collect();
    let tars = tars?;
    (!tars.is_empty()).then(|| tars.iter().sum::<f64>() / tars.len() as f64)
}
