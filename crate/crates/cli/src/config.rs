//! Course configuration: one TOML file with `[run]`, `[models.*]` and
//! `[[teams]]` sections. Relative paths resolve against the file's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use contribsum_core::agents::{ModelTier, TierKind};
use contribsum_core::attribution::DEFAULT_EXCLUDES;
use contribsum_core::identity::{load_roster, Roster};
use contribsum_core::ingest::AnalysisWindow;

pub const API_KEY_ENV: &str = "LLM_API_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn err(message: impl Into<String>) -> ConfigError {
    ConfigError(message.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    /// Deterministic offline replies, no cost.
    Mock,
    /// Recorded responses only; a missing recording is an error.
    Replay,
    /// Live calls, each exchange written to the recordings directory.
    Record,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRun {
    #[serde(default, deserialize_with = "toml_date")]
    pub sprint_start: Option<NaiveDate>,
    pub sprint_instructions: Option<PathBuf>,
    #[serde(default)]
    pub roles: bool,
    #[serde(default = "yes")]
    pub coauthor_split: bool,
    #[serde(default = "mock")]
    pub provider: ProviderMode,
    #[serde(default = "recordings")]
    pub recordings_dir: PathBuf,
    #[serde(default = "out")]
    pub out_dir: PathBuf,
    #[serde(default = "state")]
    pub state_dir: PathBuf,
    /// Added to the built-in generated-file globs.
    #[serde(default)]
    pub excludes: Vec<String>,
    /// Replaces the built-in globs entirely when true.
    #[serde(default)]
    pub replace_default_excludes: bool,
    #[serde(default)]
    pub include_branches: Vec<String>,
    #[serde(default = "four")]
    pub concurrency: usize,
    #[serde(default = "two")]
    pub team_concurrency: usize,
    #[serde(default)]
    pub requests_per_second: f64,
    #[serde(default = "endpoint")]
    pub endpoint: String,
    pub api_key: Option<String>,
}

/// Accepts a bare TOML date as well as a quoted `YYYY-MM-DD` string.
fn toml_date<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<NaiveDate>, D::Error> {
    let raw = match toml::Value::deserialize(d)? {
        toml::Value::Datetime(dt) => dt.to_string(),
        toml::Value::String(s) => s,
        other => return Err(serde::de::Error::custom(format!("expected a date, found {other}"))),
    };
    NaiveDate::parse_from_str(&raw, "%Y-%m-%d")
        .map(Some)
        .map_err(|_| serde::de::Error::custom(format!("{raw:?} is not a YYYY-MM-DD date")))
}

fn yes() -> bool {
    true
}
fn mock() -> ProviderMode {
    ProviderMode::Mock
}
fn recordings() -> PathBuf {
    "recordings".into()
}
fn out() -> PathBuf {
    "out".into()
}
fn state() -> PathBuf {
    ".contribsum".into()
}
fn four() -> usize {
    4
}
fn two() -> usize {
    2
}
fn endpoint() -> String {
    DEFAULT_ENDPOINT.into()
}

impl Default for RawRun {
    fn default() -> Self {
        toml::from_str("").expect("defaults parse")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    pub model_id: String,
    pub max_input_tokens: u64,
    pub cost_per_1k_input: f64,
    pub cost_per_1k_output: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModels {
    #[serde(default = "analysis_default")]
    pub analysis: RawModel,
    #[serde(default = "synthesis_default")]
    pub synthesis: RawModel,
}

fn analysis_default() -> RawModel {
    RawModel {
        model_id: "gpt-4o-mini".into(),
        max_input_tokens: 128_000,
        cost_per_1k_input: 0.00015,
        cost_per_1k_output: 0.0006,
    }
}

fn synthesis_default() -> RawModel {
    RawModel {
        model_id: "gpt-4o".into(),
        max_input_tokens: 128_000,
        cost_per_1k_input: 0.0025,
        cost_per_1k_output: 0.01,
    }
}

impl Default for RawModels {
    fn default() -> Self {
        Self {
            analysis: analysis_default(),
            synthesis: synthesis_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTeam {
    pub id: String,
    pub path: PathBuf,
    pub roster: PathBuf,
    pub project_description: Option<PathBuf>,
    pub branch: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default)]
    pub run: RawRun,
    #[serde(default)]
    pub models: RawModels,
    #[serde(default)]
    pub teams: Vec<RawTeam>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| err(e.to_string()))
    }

    /// Copy suitable for the run manifest: the API key is never written out.
    pub fn redacted(&self) -> Self {
        let mut c = self.clone();
        if c.run.api_key.is_some() {
            c.run.api_key = Some("<redacted>".into());
        }
        c
    }
}

/// How the analysis window was requested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WindowSpec {
    Week(u32),
    Range {
        start: DateTime<Utc>,
        end: DateTime<Utc>,
        label: Option<String>,
    },
}

pub fn parse_instant(raw: &str) -> Result<DateTime<Utc>, ConfigError> {
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
        .map_err(|_| err(format!("{raw:?} is neither an RFC 3339 timestamp nor a YYYY-MM-DD date")))
}

#[derive(Debug, Clone)]
pub struct TeamConfig {
    pub id: String,
    pub path: PathBuf,
    pub branch: Option<String>,
    pub roster_path: PathBuf,
    pub roster: Roster,
    pub project_description: String,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub raw: RawConfig,
    pub base_dir: PathBuf,
    pub teams: Vec<TeamConfig>,
    pub analysis: ModelTier,
    pub synthesis: ModelTier,
    pub sprint_instructions: String,
    pub excludes: Vec<String>,
    pub recordings_dir: PathBuf,
    pub out_dir: PathBuf,
    pub state_dir: PathBuf,
    pub api_key: Option<String>,
}

impl RunConfig {
    pub fn run(&self) -> &RawRun {
        &self.raw.run
    }

    pub fn window(&self, spec: &WindowSpec) -> Result<AnalysisWindow, ConfigError> {
        match spec {
            WindowSpec::Week(n) => {
                let start = self
                    .raw
                    .run
                    .sprint_start
                    .ok_or_else(|| err("--week needs run.sprint_start in the config"))?;
                AnalysisWindow::week(start, *n).map_err(|e| err(e.to_string()))
            }
            WindowSpec::Range { start, end, label } => {
                let label = label
                    .clone()
                    .unwrap_or_else(|| format!("{}_{}", start.format("%Y-%m-%d"), end.format("%Y-%m-%d")));
                AnalysisWindow::new(*start, *end, label).map_err(|e| err(e.to_string()))
            }
        }
    }
}

fn read(path: &Path, what: &str) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|e| err(format!("cannot read {what} {}: {e}", path.display())))
}

fn tier(kind: TierKind, raw: &RawModel) -> Result<ModelTier, ConfigError> {
    let t = ModelTier {
        tier: kind,
        model_id: raw.model_id.clone(),
        max_input_tokens: raw.max_input_tokens,
        cost_per_1k_input: raw.cost_per_1k_input,
        cost_per_1k_output: raw.cost_per_1k_output,
    };
    t.validate().map_err(|e| err(e.to_string()))?;
    Ok(t)
}

/// Validates the config and loads every file it names. Nothing here talks to
/// a provider.
pub fn resolve(raw: RawConfig, base_dir: &Path, env_api_key: Option<String>) -> Result<RunConfig, ConfigError> {
    let at = |p: &Path| base_dir.join(p);
    if raw.teams.is_empty() {
        return Err(err("no [[teams]] configured"));
    }
    let mut ids = BTreeSet::new();
    let mut paths = BTreeSet::new();
    let mut teams = Vec::new();
    for t in &raw.teams {
        if t.id.is_empty() || t.id.contains(['/', '\\']) || t.id.starts_with('.') {
            return Err(err(format!("team id {:?} cannot be used as a directory name", t.id)));
        }
        if !ids.insert(t.id.clone()) {
            return Err(err(format!("duplicate team id {:?}", t.id)));
        }
        let path = at(&t.path);
        let key = path.canonicalize().unwrap_or_else(|_| path.clone());
        if !paths.insert(key) {
            return Err(err(format!("repository {} is listed twice", path.display())));
        }
        let roster_path = at(&t.roster);
        let roster = load_roster(&read(&roster_path, "roster")?)
            .map_err(|e| err(format!("roster {}: {e}", roster_path.display())))?;
        let project_description = match &t.project_description {
            Some(p) => read(&at(p), "project description")?,
            None => String::new(),
        };
        teams.push(TeamConfig {
            id: t.id.clone(),
            path,
            branch: t.branch.clone(),
            roster_path,
            roster,
            project_description,
        });
    }
    let run = &raw.run;
    let sprint_instructions = match &run.sprint_instructions {
        Some(p) => read(&at(p), "sprint instructions")?,
        None => String::new(),
    };
    let api_key = env_api_key.filter(|k| !k.is_empty()).or_else(|| run.api_key.clone());
    if matches!(run.provider, ProviderMode::Live | ProviderMode::Record) && api_key.is_none() {
        return Err(err(format!(
            "provider mode {:?} needs an API key ({API_KEY_ENV} or run.api_key)",
            run.provider
        )));
    }
    if run.concurrency == 0 || run.team_concurrency == 0 {
        return Err(err("concurrency limits must be at least 1"));
    }
    let mut excludes: Vec<String> = if run.replace_default_excludes {
        Vec::new()
    } else {
        DEFAULT_EXCLUDES.iter().map(|s| s.to_string()).collect()
    };
    excludes.extend(run.excludes.iter().cloned());
    Ok(RunConfig {
        analysis: tier(TierKind::Analysis, &raw.models.analysis)?,
        synthesis: tier(TierKind::Synthesis, &raw.models.synthesis)?,
        recordings_dir: at(&run.recordings_dir),
        out_dir: at(&run.out_dir),
        state_dir: contribsum_core::store::state_dir(&at(&run.state_dir)),
        base_dir: base_dir.to_path_buf(),
        teams,
        sprint_instructions,
        excludes,
        api_key,
        raw,
    })
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = read(path, "config")?;
    let raw = RawConfig::parse(&text).map_err(|e| err(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    resolve(raw, &base, std::env::var(API_KEY_ENV).ok())
}
