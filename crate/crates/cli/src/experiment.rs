//! Running an experiment matrix and writing its outputs.
//!
//! Layout of an output directory:
//!
//! ```text
//! <out>/transcripts/<strategy>/<task_id>.json
//! <out>/report.csv            (or report.json)
//! <out>/incomplete/...        only when some runs failed
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use roundtable_core::backend::{Backend, Backends, HttpBackend, PromptTemplates, TokenScheme};
use roundtable_core::engine::{run_discussion, DiscussionError, EngineOptions, Roster};
use roundtable_core::metrics::{aggregate, emit_report, ReportFormat, ReportOptions, RunRecord};
use roundtable_core::strategy::{Governance, Strategy, StrategyConfig};
use roundtable_core::tasks::{baseline_agent_all, baseline_mv};
use roundtable_core::transcript::Transcript;
use roundtable_core::{TaskInstance, TranscriptDocument};
use serde::Serialize;
use thiserror::Error;
use tracing::{info, warn};

use crate::config::{BackendChoice, Baseline, ConfigError, ExperimentConfig};

const DISCUSSION_BACKEND: &str = "discussion";
const INSTRUCTOR_BACKEND: &str = "instructor";
pub const TRANSCRIPTS_DIR: &str = "transcripts";
pub const INCOMPLETE_DIR: &str = "incomplete";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("output directory {0} already holds results; pass --overwrite to replace them")]
    OutputExists(String),
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("report: {0}")]
    Report(String),
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Write { path: path.display().to_string(), source }
}

/// One cell of the run matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobKind {
    Strategy(Strategy),
    Baseline(Baseline),
}

impl JobKind {
    pub fn name(&self) -> String {
        match self {
            JobKind::Strategy(s) => s.to_string(),
            JobKind::Baseline(b) => b.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunFailure {
    pub strategy: String,
    pub task_id: String,
    pub error: String,
    /// Rounds completed before the failure, when the discussion had started.
    pub partial_rounds: Option<Transcript>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub documents: Vec<TranscriptDocument>,
    pub failures: Vec<RunFailure>,
    pub report: String,
    pub report_path: PathBuf,
}

/// Per-run seed: the experiment seed mixed with the task id and strategy
/// name (FNV-1a), so runs differ from each other but replay exactly.
pub fn run_seed(seed: u64, task_id: &str, strategy: &str) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET ^ seed;
    for b in task_id.bytes().chain([0u8]).chain(strategy.bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Shared backends for the whole experiment, or per-task scripted ones.
struct BackendPlan {
    discussion: BackendChoice,
    instructor: BackendChoice,
    scheme: TokenScheme,
    shared_discussion: Option<Arc<dyn Backend>>,
    shared_instructor: Option<Arc<dyn Backend>>,
}

impl BackendPlan {
    fn new(config: &ExperimentConfig, api_key_env: Option<&str>) -> Result<Self, ConfigError> {
        let discussion = config.backends.discussion.clone();
        let instructor = config.backends.instructor.clone().unwrap_or_else(|| discussion.clone());
        let shared = |choice: &BackendChoice| -> Result<Option<Arc<dyn Backend>>, ConfigError> {
            match choice {
                BackendChoice::Scripted(_) => Ok(None),
                BackendChoice::Http(http) => {
                    let mut http = http.clone();
                    if let Some(name) = api_key_env {
                        http.api_key_env = name.to_string();
                    }
                    let backend = HttpBackend::new(http).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                    Ok(Some(Arc::new(backend)))
                }
            }
        };
        Ok(Self {
            shared_discussion: shared(&discussion)?,
            shared_instructor: shared(&instructor)?,
            discussion,
            instructor,
            scheme: config.token_scheme,
        })
    }

    fn bind(&self, task: &TaskInstance, roster: &Roster) -> Backends {
        let make = |choice: &BackendChoice, shared: &Option<Arc<dyn Backend>>| -> Arc<dyn Backend> {
            match (choice, shared) {
                (_, Some(b)) => b.clone(),
                (BackendChoice::Scripted(profile), None) => Arc::new(profile.backend_for(task, roster, self.scheme)),
                (BackendChoice::Http(_), None) => unreachable!("http backends are built up front"),
            }
        };
        Backends::new()
            .bind(DISCUSSION_BACKEND, make(&self.discussion, &self.shared_discussion))
            .bind(INSTRUCTOR_BACKEND, make(&self.instructor, &self.shared_instructor))
    }
}

fn run_job(
    kind: JobKind,
    task: &TaskInstance,
    config: &ExperimentConfig,
    plan: &BackendPlan,
    options: &EngineOptions,
) -> Result<TranscriptDocument, DiscussionError> {
    let name = kind.name();
    let seed = run_seed(config.seed, &task.id, &name);
    let centralized = matches!(kind, JobKind::Strategy(s) if s.governance == Governance::Centralized);
    let roster = Roster::for_task(task, DISCUSSION_BACKEND, centralized.then_some(INSTRUCTOR_BACKEND));
    let backends = plan.bind(task, &roster);
    match kind {
        JobKind::Strategy(strategy) => {
            let cfg = StrategyConfig::new(strategy, config.max_rounds, seed)
                .map_err(|e| DiscussionError::Setup(e.to_string()))?;
            Ok(run_discussion(task, cfg, &roster, &backends, options)?.into_document(task, name, seed))
        }
        JobKind::Baseline(Baseline::AgentAll) => baseline_agent_all(task, DISCUSSION_BACKEND, &backends, options, seed),
        JobKind::Baseline(Baseline::Mv) => baseline_mv(task, &roster, &backends, options, seed),
    }
}

/// Recomputes run records (checking token conservation) and renders the report.
///
/// Records are sorted by strategy and task id first, so the result does not
/// depend on the order transcripts were produced or found in.
pub fn build_report(
    documents: &[TranscriptDocument],
    options: ReportOptions,
    format: ReportFormat,
) -> Result<String, ExperimentError> {
    let mut records = documents
        .iter()
        .map(RunRecord::from_document)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ExperimentError::Report(e.to_string()))?;
    records.sort_by(|a, b| (&a.strategy, &a.task_id).cmp(&(&b.strategy, &b.task_id)));
    let aggregates = aggregate(&records).map_err(|e| ExperimentError::Report(e.to_string()))?;
    Ok(emit_report(&aggregates, options, format))
}

pub fn report_file_name(format: ReportFormat) -> String {
    format!("report.{format}")
}

pub fn transcript_path(root: &Path, doc: &TranscriptDocument) -> PathBuf {
    root.join(TRANSCRIPTS_DIR).join(&doc.strategy).join(format!("{}.json", doc.task_id))
}

fn write_documents(root: &Path, documents: &[TranscriptDocument]) -> Result<(), ExperimentError> {
    for doc in documents {
        let path = transcript_path(root, doc);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(write_err(parent))?;
        }
        fs::write(&path, doc.to_json()).map_err(write_err(&path))?;
    }
    Ok(())
}

fn is_nonempty_dir(path: &Path) -> bool {
    fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false)
}

/// Settings that may override the config file.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub format: Option<ReportFormat>,
    pub api_key_env: Option<String>,
    pub overwrite: bool,
}

impl RunOverrides {
    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(alpha) = self.alpha {
            config.tar.alpha = alpha;
        }
        if let Some(beta) = self.beta {
            config.tar.beta = beta;
        }
        if let Some(format) = self.format {
            config.output.format = format;
        }
        if let Some(jobs) = self.jobs {
            config.jobs = Some(jobs);
        }
        if let Some(out) = &self.out {
            config.output.dir = Some(out.clone());
        }
    }
}

/// Runs every (strategy, task) pair plus the configured baselines.
///
/// Nothing is written until every input has been checked. When some runs
/// fail, the successful transcripts, a report over them and the failures
/// (with partial transcripts) go under `<out>/incomplete/` instead.
pub fn run_experiment(
    config: &ExperimentConfig,
    overrides: &RunOverrides,
) -> Result<ExperimentOutcome, ExperimentError> {
    let mut config = config.clone();
    overrides.apply(&mut config);
    config.check()?;
    let strategies = config.strategies()?;
    let tasks = config.tasks()?;
    let templates = match &config.templates {
        Some(dir) => PromptTemplates::from_dir(dir).map_err(|e| ConfigError::Invalid(e.to_string()))?,
        None => PromptTemplates::builtin(),
    };
    let out =
        config.output.dir.clone().ok_or_else(|| ConfigError::Invalid("no output directory (use --out)".into()))?;
    let owned = [out.join(TRANSCRIPTS_DIR), out.join(INCOMPLETE_DIR)];
    if owned.iter().any(|p| is_nonempty_dir(p)) {
        if !overrides.overwrite {
            return Err(ExperimentError::OutputExists(out.display().to_string()));
        }
        for p in &owned {
            if p.exists() {
                fs::remove_dir_all(p).map_err(write_err(p))?;
            }
        }
    }
    let plan = BackendPlan::new(&config, overrides.api_key_env.as_deref())?;
    let options = EngineOptions { templates, tie_rule: config.tie_rule.clone(), parallel: true };

    let kinds: Vec<JobKind> = strategies
        .iter()
        .map(|s| JobKind::Strategy(*s))
        .chain(config.baselines.iter().map(|b| JobKind::Baseline(*b)))
        .collect();
    let jobs: Vec<(JobKind, &TaskInstance)> = kinds.iter().flat_map(|k| tasks.iter().map(move |t| (*k, t))).collect();
    info!(runs = jobs.len(), tasks = tasks.len(), "starting experiment");

    let threads = config.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ConfigError::Invalid(format!("cannot start worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|(kind, task)| (kind.name(), task.id.clone(), run_job(*kind, task, &config, &plan, &options)))
            .collect()
    });

    let mut documents = Vec::new();
    let mut failures = Vec::new();
    for (strategy, task_id, result) in results {
        match result {
            Ok(doc) => documents.push(doc),
            Err(e) => {
                warn!(%strategy, %task_id, error = %e, "run failed");
                failures.push(RunFailure {
                    partial_rounds: e.partial_transcript().cloned(),
                    strategy,
                    task_id,
                    error: e.to_string(),
                });
            }
        }
    }

    let report_options = ReportOptions { params: config.tar, per_run_tar: config.output.per_run_tar };
    let report = build_report(&documents, report_options, config.output.format)?;
    let root = if failures.is_empty() { out.clone() } else { out.join(INCOMPLETE_DIR) };
    fs::create_dir_all(&root).map_err(write_err(&root))?;
    write_documents(&root, &documents)?;
    let report_path = root.join(report_file_name(config.output.format));
    fs::write(&report_path, &report).map_err(write_err(&report_path))?;
    if !failures.is_empty() {
        let path = root.join("failures.json");
        let text = serde_json::to_string_pretty(&failures).expect("failure list serializes") + "\n";
        fs::write(&path, text).map_err(write_err(&path))?;
    }
    Ok(ExperimentOutcome { documents, failures, report, report_path })
}
