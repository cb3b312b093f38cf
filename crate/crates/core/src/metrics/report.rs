//! CSV and JSON reports in the layout `Strategy, Acc, #I, #O, Round, TAR, NTAR`.
//!
//! NTAR is normalized over the discussion strategies of one report. Baseline
//! rows get a TAR but no NTAR. CSV shows NTAR to two decimals; JSON keeps
//! full precision.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{compute_ntar, compute_tar, per_run_mean_tar, AggregateMetrics, TarParams};
use crate::backend::TokenScheme;
use crate::tasks::{Scenario, MV};

pub const CSV_COLUMNS: [&str; 7] = ["Strategy", "Acc", "#I", "#O", "Round", "TAR", "NTAR"];
const PER_RUN_COLUMN: &str = "TAR_per_run";
const NOT_APPLICABLE: &str = "N/A";
const SES_MV_NOTE: &str =
    "voting over claim-verification segments is not comparable with discussion strategies: most segments carry no verdict";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format {other:?}; expected csv or json")),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Csv => "csv",
            Self::Json => "json",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub params: TarParams,
    /// Add the mean of per-run TARs as an extra column.
    #[serde(default)]
    pub per_run_tar: bool,
}

impl ReportOptions {
    pub fn new(params: TarParams) -> Self {
        Self { params, per_run_tar: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(rename = "Strategy")]
    pub strategy: String,
    #[serde(rename = "Acc")]
    pub accuracy: f64,
    #[serde(rename = "#I")]
    pub mean_input_tokens: f64,
    #[serde(rename = "#O")]
    pub mean_output_tokens: f64,
    #[serde(rename = "Round")]
    pub mean_rounds: f64,
    /// `None` when no tokens were counted.
    #[serde(rename = "TAR")]
    pub tar: Option<f64>,
    /// `None` for baselines and when every TAR is zero.
    #[serde(rename = "NTAR")]
    pub ntar: Option<f64>,
    #[serde(rename = "TAR_per_run", skip_serializing_if = "Option::is_none", default)]
    pub per_run_tar: Option<f64>,
    /// Mean discussion messages per run.
    pub turns: f64,
    pub n: usize,
    pub token_scheme: TokenScheme,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

#[derive(Debug, Serialize)]
struct JsonReport<'a> {
    alpha: f64,
    beta: f64,
    columns: Vec<&'a str>,
    rows: &'a [ReportRow],
}

/// Computes TAR and NTAR for every aggregate, keeping their order.
pub fn report_rows(aggregates: &[AggregateMetrics], options: ReportOptions) -> Vec<ReportRow> {
    let params = options.params;
    let tars: Vec<Option<f64>> = aggregates
        .iter()
        .map(|a| compute_tar(a.accuracy, a.mean_input_tokens, a.mean_output_tokens, params).ok())
        .collect();
    let lattice: BTreeMap<usize, f64> = aggregates
        .iter()
        .zip(&tars)
        .enumerate()
        .filter(|(_, (a, _))| a.is_lattice_strategy())
        .filter_map(|(i, (_, t))| Some((i, (*t)?)))
        .collect();
    let ntars = if lattice.is_empty() { BTreeMap::new() } else { compute_ntar(&lattice).unwrap_or_default() };

    aggregates
        .iter()
        .zip(tars)
        .enumerate()
        .map(|(i, (a, tar))| ReportRow {
            strategy: a.strategy.clone(),
            accuracy: a.accuracy,
            mean_input_tokens: a.mean_input_tokens,
            mean_output_tokens: a.mean_output_tokens,
            mean_rounds: a.mean_rounds,
            tar,
            ntar: ntars.get(&i).copied(),
            per_run_tar: if options.per_run_tar { per_run_mean_tar(&a.samples, params) } else { None },
            turns: a.mean_turns,
            n: a.n,
            token_scheme: a.token_scheme,
            note: (a.strategy == MV && a.scenario == Some(Scenario::Ses)).then(|| SES_MV_NOTE.to_string()),
        })
        .collect()
}

fn opt(value: Option<f64>, decimals: usize) -> String {
    value.map_or_else(|| NOT_APPLICABLE.to_string(), |v| format!("{v:.decimals$}"))
}

/// Renders a report. An empty aggregate list yields the header alone.
pub fn emit_report(aggregates: &[AggregateMetrics], options: ReportOptions, format: ReportFormat) -> String {
    let rows = report_rows(aggregates, options);
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header: Vec<&str> = CSV_COLUMNS.to_vec();
            if options.per_run_tar {
                header.push(PER_RUN_COLUMN);
            }
            w.write_record(&header).expect("writing to memory");
            for r in &rows {
                let mut record = vec![
                    r.strategy.clone(),
                    format!("{:.1}", r.accuracy),
                    format!("{:.1}", r.mean_input_tokens),
                    format!("{:.1}", r.mean_output_tokens),
                    format!("{:.2}", r.mean_rounds),
                    opt(r.tar, 7),
                    opt(r.ntar, 2),
                ];
                if options.per_run_tar {
                    record.push(opt(r.per_run_tar, 7));
                }
                w.write_record(&record).expect("writing to memory");
            }
            String::from_utf8(w.into_inner().expect("flushing to memory")).expect("CSV of UTF-8 fields")
        }
        ReportFormat::Json => {
            let mut columns = CSV_COLUMNS.to_vec();
            if options.per_run_tar {
                columns.push(PER_RUN_COLUMN);
            }
            let doc = JsonReport { alpha: options.params.alpha, beta: options.params.beta, columns, rows: &rows };
            let mut s = serde_json::to_string_pretty(&doc).expect("report serialization is infallible");
            s.push('\n');
            s
        }
    }
}
