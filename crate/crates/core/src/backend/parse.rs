//! Line-oriented reply grammar shared by every backend.
//!
//! | turn        | line                              |
//! |-------------|-----------------------------------|
//! | discussion  | `PREDICTION: <label>`             |
//! | addressed   | `TO: all` or `TO: <id>, <id>`     |
//! | intent      | `SPEAK: yes` / `SPEAK: no`        |
//! | plan        | `SPEAKERS: <id>, <id>`            |
//! | control     | `CONTINUE` or `FINAL:<label>`     |
//!
//! When a marker appears on several lines the last usable one wins.

use crate::decision::InstructorRuling;
use crate::tasks::LabelSet;

pub const PREDICTION_MARKER: &str = "PREDICTION:";
pub const ADDRESS_MARKER: &str = "TO:";
pub const INTENT_MARKER: &str = "SPEAK:";
pub const SPEAKERS_MARKER: &str = "SPEAKERS:";
pub const CONTINUE_KEYWORD: &str = "CONTINUE";
pub const FINAL_MARKER: &str = "FINAL:";

fn clean_label(raw: &str) -> &str {
    raw.trim().trim_end_matches(['.', '*', '"', '\'']).trim_start_matches(['*', '"', '\'']).trim()
}

/// The label named by the last `PREDICTION:` line that resolves against `labels`.
pub fn extract_prediction(content: &str, labels: &LabelSet) -> Option<String> {
    content.lines().rev().find_map(|line| {
        let at = line.rfind(PREDICTION_MARKER)?;
        labels.canonicalize(clean_label(&line[at + PREDICTION_MARKER.len()..])).map(str::to_string)
    })
}

fn marker_value<'a>(content: &'a str, marker: &str) -> Option<&'a str> {
    content.lines().rev().find_map(|line| line.trim().strip_prefix(marker).map(str::trim))
}

fn id_list(value: &str) -> Vec<String> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

/// `SPEAK: yes|no`.
pub fn parse_intent(content: &str) -> Option<bool> {
    match marker_value(content, INTENT_MARKER)?.to_ascii_lowercase().trim_end_matches('.') {
        "yes" | "true" => Some(true),
        "no" | "false" => Some(false),
        _ => None,
    }
}

/// `SPEAKERS: a1, a3`. An empty list is a valid (silent) plan.
pub fn parse_speakers(content: &str) -> Option<Vec<String>> {
    marker_value(content, SPEAKERS_MARKER).map(id_list)
}

/// `TO: all` yields `Some(None)`; `TO: a2, a3` yields the list.
pub fn parse_addressees(content: &str) -> Option<Option<Vec<String>>> {
    let value = marker_value(content, ADDRESS_MARKER)?;
    if value.eq_ignore_ascii_case("all") {
        Some(None)
    } else {
        Some(Some(id_list(value)))
    }
}

/// `CONTINUE` or `FINAL:<label>`; the label must resolve against `labels`.
pub fn parse_control(content: &str, labels: &LabelSet) -> Option<InstructorRuling> {
    content.lines().rev().find_map(|line| {
        let line = line.trim();
        if line == CONTINUE_KEYWORD {
            return Some(InstructorRuling::Continue);
        }
        let rest = line.strip_prefix(FINAL_MARKER)?;
        labels.canonicalize(clean_label(rest)).map(|l| InstructorRuling::Terminate(l.to_string()))
    })
}
