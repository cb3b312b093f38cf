//! Experiment configuration files.
//!
//! ```json
//! {
//!   "strategies": "all",
//!   "baselines": ["Agent_all", "MV"],
//!   "tasks": {"generate": {"scenario": "SES", "n_tasks": 20, "seed": 7}},
//!   "backends": {"discussion": {"type": "scripted", "stubbornness": 1}},
//!   "max_rounds": 10,
//!   "seed": 42,
//!   "tar": {"alpha": 1.0, "beta": 4.0},
//!   "output": {"dir": "out", "format": "csv"}
//! }
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use roundtable_core::backend::{LlmBackendConfig, ScriptedProfile, TokenScheme};
use roundtable_core::decision::TieRule;
use roundtable_core::metrics::{ReportFormat, TarParams};
use roundtable_core::strategy::{enumerate_valid_strategies, parse_strategy, validate_strategy, DEFAULT_MAX_ROUNDS};
use roundtable_core::tasks::generate::generate;
use roundtable_core::tasks::{load_tasks, GeneratorParams, AGENT_ALL, MV};
use roundtable_core::{Strategy, TaskInstance};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategySelection {
    /// The keyword `"all"`.
    Keyword(String),
    List(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Baseline {
    #[serde(rename = "Agent_all")]
    AgentAll,
    #[serde(rename = "MV")]
    Mv,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::AgentAll => AGENT_ALL,
            Baseline::Mv => MV,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSource {
    File(PathBuf),
    Generate(GeneratorParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendChoice {
    Scripted(ScriptedProfile),
    Http(LlmBackendConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSelection {
    pub discussion: BackendChoice,
    /// Defaults to the discussion backend.
    #[serde(default)]
    pub instructor: Option<BackendChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: ReportFormat,
    #[serde(default)]
    pub per_run_tar: bool,
}

fn default_format() -> ReportFormat {
    ReportFormat::Csv
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, format: default_format(), per_run_tar: false }
    }
}

fn default_max_rounds() -> u32 {
    DEFAULT_MAX_ROUNDS
}

fn default_scheme() -> TokenScheme {
    TokenScheme::Whitespace
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategies: StrategySelection,
    #[serde(default)]
    pub baselines: Vec<Baseline>,
    pub tasks: TaskSource,
    pub backends: BackendSelection,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
    pub seed: u64,
    #[serde(default)]
    pub tar: TarParams,
    #[serde(default)]
    pub output: OutputConfig,
    /// Token counting for scripted backends.
    #[serde(default = "default_scheme")]
    pub token_scheme: TokenScheme,
    /// A pinned prompt template directory; the built-in set otherwise.
    #[serde(default)]
    pub templates: Option<PathBuf>,
    #[serde(default)]
    pub tie_rule: TieRule,
    #[serde(default)]
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|source| ConfigError::Json { path: origin.to_string(), source })
    }

    /// Reads a config and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let mut config = Self::from_json(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let TaskSource::File(p) = &mut config.tasks {
            resolve(p);
        }
        if let Some(p) = config.templates.as_mut() {
            resolve(p);
        }
        if let Some(p) = config.output.dir.as_mut() {
            resolve(p);
        }
        Ok(config)
    }

    /// The selected strategies, checked against the constraint rules.
    pub fn strategies(&self) -> Result<Vec<Strategy>, ConfigError> {
        let names = match &self.strategies {
            StrategySelection::Keyword(k) if k == "all" => return Ok(enumerate_valid_strategies()),
            StrategySelection::Keyword(k) => {
                return Err(ConfigError::Invalid(format!("strategies must be \"all\" or a list, got {k:?}")))
            }
            StrategySelection::List(names) => names,
        };
        let mut problems = Vec::new();
        let mut out = Vec::new();
        for name in names {
            match parse_strategy(name) {
                Ok(s) => match validate_strategy(&s) {
                    Ok(()) if out.contains(&s) => problems.push(format!("{s} is listed twice")),
                    Ok(()) => out.push(s),
                    Err(e) => problems.push(e.to_string()),
                },
                Err(e) => problems.push(format!("{name:?}: {e}")),
            }
        }
        if out.is_empty() && problems.is_empty() && self.baselines.is_empty() {
            problems.push("no strategies or baselines selected".into());
        }
        if problems.is_empty() {
            Ok(out)
        } else {
            Err(ConfigError::Invalid(problems.join("; ")))
        }
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.max_rounds == 0 {
            return Err(ConfigError::Invalid("max_rounds must be at least 1".into()));
        }
        if count_scheme_is_local(self.token_scheme).is_err() {
            return Err(ConfigError::Invalid("token_scheme must be whitespace or chars_div4".into()));
        }
        TarParams::new(self.tar.alpha, self.tar.beta).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.jobs == Some(0) {
            return Err(ConfigError::Invalid("jobs must be at least 1".into()));
        }
        for choice in std::iter::once(&self.backends.discussion).chain(self.backends.instructor.as_ref()) {
            if let BackendChoice::Http(http) = choice {
                http.validate().map_err(|e| ConfigError::Invalid(format!("http backend: {e}")))?;
            }
        }
        self.strategies().map(|_| ())
    }

    /// Loads or generates the task batch.
    pub fn tasks(&self) -> Result<Vec<TaskInstance>, ConfigError> {
        let tasks = match &self.tasks {
            TaskSource::File(path) => load_tasks(path).map_err(|e| ConfigError::Invalid(e.to_string()))?,
            TaskSource::Generate(params) => generate(params).map_err(|e| ConfigError::Invalid(e.to_string()))?,
        };
        for t in &tasks {
            if !is_file_safe(&t.id) {
                return Err(ConfigError::Invalid(format!(
                    "task id {:?} cannot be used as a file name (allowed: letters, digits, '.', '_', '-')",
                    t.id
                )));
            }
        }
        Ok(tasks)
    }
}

fn count_scheme_is_local(scheme: TokenScheme) -> Result<(), ()> {
    roundtable_core::backend::count_tokens("", scheme).map(|_| ()).ok_or(())
}

pub fn is_file_safe(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
}
