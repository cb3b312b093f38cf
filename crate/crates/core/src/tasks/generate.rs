//! Synthetic task generators.
//!
//! Generated segments carry machine-readable cue tokens so the scripted
//! agents can read them without any language model:
//! `[verdict: <label>]` marks evidence that settles the answer and
//! `[hint: <label>]` marks a partial or misleading lead.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{LabelSet, Relevance, Scenario, Segment, TaskInstance, DEI_SEGMENTS};

pub const VERDICT_TAG: &str = "verdict";
pub const HINT_TAG: &str = "hint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub scenario: Scenario,
    pub n_tasks: usize,
    /// Segments per task. DEI always uses the five canonical segments.
    #[serde(default = "default_n_segments")]
    pub n_segments: usize,
    /// Defaults to the scenario's canonical label set.
    #[serde(default)]
    pub label_set: Option<LabelSet>,
    /// DEI only: which segment carries the decisive evidence.
    #[serde(default = "default_informative")]
    pub informative_segment: String,
    /// SES only: how many segments agree with the gold label.
    #[serde(default = "default_n_consistent")]
    pub n_consistent: usize,
    /// Probability that a body sentence is filler rather than topical.
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub seed: u64,
}

fn default_n_segments() -> usize {
    6
}
fn default_informative() -> String {
    "BHC".into()
}
fn default_n_consistent() -> usize {
    1
}
fn default_noise() -> f64 {
    0.3
}

impl GeneratorParams {
    pub fn ses(n_tasks: usize, n_segments: usize, n_consistent: usize, seed: u64) -> Self {
        Self {
            scenario: Scenario::Ses,
            n_tasks,
            n_segments,
            label_set: None,
            informative_segment: default_informative(),
            n_consistent,
            noise: default_noise(),
            seed,
        }
    }

    pub fn dei(n_tasks: usize, seed: u64) -> Self {
        Self {
            scenario: Scenario::Dei,
            n_tasks,
            n_segments: DEI_SEGMENTS.len(),
            label_set: None,
            informative_segment: default_informative(),
            n_consistent: 1,
            noise: default_noise(),
            seed,
        }
    }

    fn labels(&self) -> LabelSet {
        self.label_set.clone().unwrap_or_else(|| match self.scenario {
            Scenario::Dei => LabelSet::pddp(),
            Scenario::Ses => LabelSet::ses(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerateError {
    #[error("invalid generator parameter {field}: {message}")]
    Param { field: &'static str, message: String },
    #[error("generator for {0} called with params for another scenario")]
    WrongScenario(Scenario),
}

fn param(field: &'static str, message: impl Into<String>) -> GenerateError {
    GenerateError::Param { field, message: message.into() }
}

fn check_common(params: &GeneratorParams, labels: &LabelSet) -> Result<(), GenerateError> {
    if !(0.0..=1.0).contains(&params.noise) {
        return Err(param("noise", format!("{} is outside [0, 1]", params.noise)));
    }
    if labels.len() < 2 {
        return Err(param("label_set", "need at least two labels"));
    }
    Ok(())
}

const FILLER: &[&str] = &[
    "The record was reviewed during routine documentation.",
    "Several entries were transcribed from earlier notes.",
    "No further remarks were added at this point.",
    "This section was updated by the covering staff.",
    "Formatting of the original source was preserved.",
];

const CLAIM_SUBJECTS: &[&str] = &[
    "the final season of the series",
    "the bridge renovation",
    "the regional election turnout",
    "the museum's founding year",
    "the championship final",
    "the river's total length",
];

const DEI_TOPICAL: [&[&str]; 5] = [
    &[
        "The hospital course was notable for gradual improvement.",
        "Vital signs were monitored closely throughout the stay.",
        "The care team adjusted management over several days.",
    ],
    &["A procedure was performed without immediate complication.", "Post-procedural imaging was reviewed by the team."],
    &["Laboratory values were trended daily.", "Imaging results were discussed with the patient."],
    &["Discharge medications were reconciled with home medications.", "Dosing instructions were provided in writing."],
    &["The patient lives with family members.", "Social work reviewed supports available at home."],
];

fn body(rng: &mut ChaCha8Rng, topical: &[&str], noise: f64, n: usize) -> String {
    (0..n)
        .map(|_| {
            let pool = if rng.gen_bool(noise) { FILLER } else { topical };
            *pool.choose(rng).expect("sentence pools are non-empty")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn cue(tag: &str, label: &str) -> String {
    format!("[{tag}: {label}]")
}

fn other_label<'a>(rng: &mut ChaCha8Rng, labels: &'a LabelSet, not: &str) -> &'a str {
    let others: Vec<&str> = labels.iter().filter(|l| *l != not).collect();
    others.choose(rng).expect("label set has at least two labels")
}

/// Claim-verification tasks where `n_consistent` of `n_segments` evidence
/// pieces support the gold verdict and the rest point elsewhere.
pub fn generate_ses(params: &GeneratorParams) -> Result<Vec<TaskInstance>, GenerateError> {
    if params.scenario != Scenario::Ses {
        return Err(GenerateError::WrongScenario(Scenario::Ses));
    }
    let labels = params.labels();
    check_common(params, &labels)?;
    if params.n_segments < 2 {
        return Err(param("n_segments", "need at least 2 segments"));
    }
    if params.n_consistent < 1 || params.n_consistent >= params.n_segments {
        return Err(param(
            "n_consistent",
            format!("must satisfy 1 <= n_consistent < n_segments ({})", params.n_segments),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut tasks = Vec::with_capacity(params.n_tasks);
    for t in 0..params.n_tasks {
        let gold = labels.as_slice()[rng.gen_range(0..labels.len())].clone();
        let subject = *CLAIM_SUBJECTS.choose(&mut rng).expect("non-empty");
        let year = rng.gen_range(1950..2024);
        let question = format!("Claim: {subject} was completed in {year}.");

        let mut consistent = vec![false; params.n_segments];
        for flag in consistent.iter_mut().take(params.n_consistent) {
            *flag = true;
        }
        consistent.shuffle(&mut rng);

        let segments = consistent
            .iter()
            .enumerate()
            .map(|(i, &is_consistent)| {
                let topical =
                    [format!("A source discusses {subject}."), format!("Reports around {year} mention {subject}.")];
                let topical: Vec<&str> = topical.iter().map(String::as_str).collect();
                let text = body(&mut rng, &topical, params.noise, 2);
                let (tag, label, relevance) = if is_consistent {
                    (VERDICT_TAG, gold.as_str(), Relevance::Consistent)
                } else {
                    (HINT_TAG, other_label(&mut rng, &labels, &gold), Relevance::Inconsistent)
                };
                Segment {
                    name: format!("evidence_{}", i + 1),
                    text: format!("{text} {}", cue(tag, label)),
                    relevance: Some(relevance),
                }
            })
            .collect();

        tasks.push(TaskInstance {
            id: format!("ses-{:04}", t + 1),
            scenario: Scenario::Ses,
            question,
            label_set: labels.clone(),
            gold_label: gold,
            segments,
        });
    }
    Ok(tasks)
}

/// Discharge-disposition tasks over the five canonical segments; only the
/// informative segment settles the label.
pub fn generate_dei(params: &GeneratorParams) -> Result<Vec<TaskInstance>, GenerateError> {
    if params.scenario != Scenario::Dei {
        return Err(GenerateError::WrongScenario(Scenario::Dei));
    }
    let labels = params.labels();
    check_common(params, &labels)?;
    if !DEI_SEGMENTS.contains(&params.informative_segment.as_str()) {
        return Err(param(
            "informative_segment",
            format!("{:?} is not one of {}", params.informative_segment, DEI_SEGMENTS.join(", ")),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut tasks = Vec::with_capacity(params.n_tasks);
    for t in 0..params.n_tasks {
        let gold = labels.as_slice()[rng.gen_range(0..labels.len())].clone();
        let age = rng.gen_range(25..95);
        let segments = DEI_SEGMENTS
            .iter()
            .zip(DEI_TOPICAL.iter())
            .map(|(name, topical)| {
                let text = body(&mut rng, topical, params.noise, 3);
                let cue = if *name == params.informative_segment {
                    cue(VERDICT_TAG, &gold)
                } else {
                    let any = labels.as_slice()[rng.gen_range(0..labels.len())].clone();
                    cue(HINT_TAG, &any)
                };
                Segment { name: (*name).to_string(), text: format!("{text} {cue}"), relevance: None }
            })
            .collect();
        tasks.push(TaskInstance {
            id: format!("dei-{:04}", t + 1),
            scenario: Scenario::Dei,
            question: format!("What is the discharge disposition of this {age}-year-old patient?"),
            label_set: labels.clone(),
            gold_label: gold,
            segments,
        });
    }
    Ok(tasks)
}

/// Generates tasks for whichever scenario the params name.
pub fn generate(params: &GeneratorParams) -> Result<Vec<TaskInstance>, GenerateError> {
    match params.scenario {
        Scenario::Ses => generate_ses(params),
        Scenario::Dei => generate_dei(params),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CueStrength {
    Decisive,
    Hint,
}

/// Finds the first cue token in `text` naming a label in `labels`;
/// decisive verdicts win over hints.
pub fn read_cue(text: &str, labels: &LabelSet) -> Option<(String, CueStrength)> {
    find_tag(text, VERDICT_TAG, labels)
        .map(|l| (l, CueStrength::Decisive))
        .or_else(|| find_tag(text, HINT_TAG, labels).map(|l| (l, CueStrength::Hint)))
}

fn find_tag(text: &str, tag: &str, labels: &LabelSet) -> Option<String> {
    let open = format!("[{tag}:");
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let after = &rest[start + open.len()..];
        let Some(end) = after.find(']') else { break };
        if let Some(label) = labels.canonicalize(&after[..end]) {
            return Some(label.to_string());
        }
        rest = &after[end..];
    }
    None
}
