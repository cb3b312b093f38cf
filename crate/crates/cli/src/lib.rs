//! The `roundtable` command line: `validate`, `generate`, `run` and `report`.
//!
//! Exit codes: 0 on success, 1 for invalid input or configuration, 2 for
//! usage errors, 3 when some runs failed or some transcripts were unreadable.

pub mod config;
pub mod experiment;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use roundtable_core::metrics::{ReportFormat, ReportOptions, RunRecord, TarParams};
use roundtable_core::strategy::{parse_strategy, validate_strategy};
use roundtable_core::tasks::generate::generate;
use roundtable_core::tasks::{tasks_to_json, GeneratorParams, Scenario};
use roundtable_core::TranscriptDocument;
use tracing::warn;
use walkdir::WalkDir;

pub use config::{ConfigError, ExperimentConfig};
pub use experiment::{build_report, run_experiment, ExperimentError, RunOverrides};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "roundtable", version, about = "Multi-agent discussion strategies: run, measure and compare")]
pub struct Cli {
    /// More log output on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check strategy strings against the composition rules.
    Validate {
        #[arg(required = true, value_name = "STRATEGY")]
        strategies: Vec<String>,
    },
    /// Write a synthetic task batch as JSON.
    Generate(GenerateArgs),
    /// Run an experiment described by a config file.
    Run(RunArgs),
    /// Rebuild a report from a directory of transcripts.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator parameters as JSON; the other flags are ignored when given.
    #[arg(long, conflicts_with_all = ["scenario", "tasks", "segments", "consistent", "noise", "seed"])]
    pub config: Option<PathBuf>,
    /// SES or DEI.
    #[arg(long, value_parser = parse_scenario, default_value = "SES")]
    pub scenario: Scenario,
    #[arg(long, default_value_t = 10)]
    pub tasks: usize,
    #[arg(long, default_value_t = 6)]
    pub segments: usize,
    #[arg(long, default_value_t = 1)]
    pub consistent: usize,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub format: Option<ReportFormat>,
    /// Environment variable holding the API key for HTTP backends.
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// Replace results already present in the output directory.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// A run output directory, or any directory of transcript files.
    pub dir: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    pub format: ReportFormat,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 4.0)]
    pub beta: f64,
    /// Add the mean of per-run TARs as an extra column.
    #[arg(long)]
    pub per_run_tar: bool,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    match s.to_ascii_uppercase().as_str() {
        "SES" => Ok(Scenario::Ses),
        "DEI" => Ok(Scenario::Dei),
        other => Err(format!("unknown scenario {other:?}; expected SES or DEI")),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli.command, stdout, stderr),
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            code
        }
    }
}

/// Runs an already parsed command.
pub fn execute(command: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    match command {
        Command::Validate { strategies } => cmd_validate(&strategies, stdout),
        Command::Generate(args) => cmd_generate(&args, stdout, stderr),
        Command::Run(args) => cmd_run(&args, stdout, stderr),
        Command::Report(args) => cmd_report(&args, stdout, stderr),
    }
}

pub fn cmd_validate(strategies: &[String], stdout: &mut dyn Write) -> i32 {
    let mut code = EXIT_OK;
    for text in strategies {
        let verdict = match parse_strategy(text) {
            Ok(s) => match validate_strategy(&s) {
                Ok(()) => "valid".to_string(),
                Err(e) => format!("invalid: {e}"),
            },
            Err(e) => format!("invalid: {e}"),
        };
        if verdict != "valid" {
            code = EXIT_INVALID;
        }
        let _ = writeln!(stdout, "{text}: {verdict}");
    }
    code
}

fn cmd_generate(args: &GenerateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let params = match &args.config {
        Some(path) => {
            let parsed =
                fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display())).and_then(|t| {
                    serde_json::from_str::<GeneratorParams>(&t).map_err(|e| format!("{}: {e}", path.display()))
                });
            match parsed {
                Ok(p) => p,
                Err(e) => return fail(stderr, EXIT_INVALID, &e),
            }
        }
        None => {
            let mut p = match args.scenario {
                Scenario::Ses => GeneratorParams::ses(args.tasks, args.segments, args.consistent, args.seed),
                Scenario::Dei => GeneratorParams::dei(args.tasks, args.seed),
            };
            if let Some(noise) = args.noise {
                p.noise = noise;
            }
            p
        }
    };
    let tasks = match generate(&params) {
        Ok(t) => t,
        Err(e) => return fail(stderr, EXIT_INVALID, &e.to_string()),
    };
    let json = tasks_to_json(&tasks);
    match &args.out {
        Some(path) => match fs::write(path, json) {
            Ok(()) => EXIT_OK,
            Err(e) => fail(stderr, EXIT_INVALID, &format!("cannot write {}: {e}", path.display())),
        },
        None => {
            let _ = stdout.write_all(json.as_bytes());
            EXIT_OK
        }
    }
}

fn fail(stderr: &mut dyn Write, code: i32, message: &str) -> i32 {
    let _ = writeln!(stderr, "error: {message}");
    code
}

fn cmd_run(args: &RunArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let config = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return fail(stderr, EXIT_INVALID, &e.to_string()),
    };
    let overrides = RunOverrides {
        out: args.out.clone(),
        jobs: args.jobs,
        seed: args.seed,
        alpha: args.alpha,
        beta: args.beta,
        format: args.format,
        api_key_env: args.api_key_env.clone(),
        overwrite: args.overwrite,
    };
    match run_experiment(&config, &overrides) {
        Ok(outcome) if outcome.failures.is_empty() => {
            let _ = writeln!(
                stdout,
                "{} runs completed; report at {}",
                outcome.documents.len(),
                outcome.report_path.display()
            );
            EXIT_OK
        }
        Ok(outcome) => {
            for f in &outcome.failures {
                let _ = writeln!(stderr, "failed: {} on {}: {}", f.strategy, f.task_id, f.error);
            }
            let _ = writeln!(
                stderr,
                "{} of {} runs failed; partial results at {}",
                outcome.failures.len(),
                outcome.failures.len() + outcome.documents.len(),
                outcome.report_path.parent().unwrap_or(Path::new(".")).display()
            );
            EXIT_PARTIAL
        }
        Err(e) => fail(stderr, EXIT_INVALID, &e.to_string()),
    }
}

/// Transcripts that could be read, plus `(path, reason)` for those that could not.
pub fn read_transcripts(dir: &Path) -> (Vec<TranscriptDocument>, Vec<(PathBuf, String)>) {
    let nested = dir.join(experiment::TRANSCRIPTS_DIR);
    let root = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let mut paths: Vec<PathBuf> = WalkDir::new(&root)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == "json"))
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    let mut docs = Vec::new();
    let mut bad = Vec::new();
    for path in paths {
        let parsed = fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| TranscriptDocument::from_json(&t).map_err(|e| e.to_string()))
            .and_then(|d| RunRecord::from_document(&d).map(|_| d).map_err(|e| e.to_string()));
        match parsed {
            Ok(d) => docs.push(d),
            Err(reason) => bad.push((path, reason)),
        }
    }
    (docs, bad)
}

fn cmd_report(args: &ReportArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    if !args.dir.is_dir() {
        return fail(stderr, EXIT_INVALID, &format!("{} is not a directory", args.dir.display()));
    }
    let params = match TarParams::new(args.alpha, args.beta) {
        Ok(p) => p,
        Err(e) => return fail(stderr, EXIT_INVALID, &e.to_string()),
    };
    let (docs, bad) = read_transcripts(&args.dir);
    for (path, reason) in &bad {
        let _ = writeln!(stderr, "skipped {}: {reason}", path.display());
    }
    if docs.is_empty() {
        warn!(dir = %args.dir.display(), "no transcripts found");
        let _ = writeln!(stderr, "warning: no usable transcripts under {}", args.dir.display());
    }
    let options = ReportOptions { params, per_run_tar: args.per_run_tar };
    let report = match build_report(&docs, options, args.format) {
        Ok(r) => r,
        Err(e) => return fail(stderr, EXIT_INVALID, &e.to_string()),
    };
    let written = match &args.out {
        Some(path) => fs::write(path, &report).map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => stdout.write_all(report.as_bytes()).map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        return fail(stderr, EXIT_INVALID, &e);
    }
    if bad.is_empty() {
        EXIT_OK
    } else {
        EXIT_PARTIAL
    }
}
