//! The LLM chain.
//!
//! An analysis tier turns each file into a functionality row and each
//! (student, file) evidence record into a contribution row. A synthesis
//! tier turns those rows into per-student and team summaries. Prompts only
//! ever carry the compressed rows, never raw blame output.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::attribution::{ContributionEvidence, ContributionSet};
use crate::identity::{Roster, StudentId};
use crate::ingest::AnalysisWindow;
use crate::metrics::{FileKind, FileMetrics};
use crate::store::{self, CacheKey, CostLedger, LedgerEntry, Store, StoreError};
use crate::tables::{ContributionRecord, FunctionalityRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TierKind {
    Analysis,
    Synthesis,
}

impl fmt::Display for TierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TierKind::Analysis => "analysis",
            TierKind::Synthesis => "synthesis",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTier {
    pub tier: TierKind,
    pub model_id: String,
    pub max_input_tokens: u64,
    pub cost_per_1k_input: f64,
    pub cost_per_1k_output: f64,
}

impl ModelTier {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_input_tokens == 0 {
            return Err(AgentError::InvalidTier(format!("{}: max_input_tokens must be > 0", self.tier)));
        }
        if !(self.cost_per_1k_input >= 0.0 && self.cost_per_1k_output >= 0.0) {
            return Err(AgentError::InvalidTier(format!("{}: rates must be >= 0", self.tier)));
        }
        if self.model_id.trim().is_empty() {
            return Err(AgentError::InvalidTier(format!("{}: model_id is empty", self.tier)));
        }
        Ok(())
    }

    /// Largest request allowed: 80% of the model's input window.
    pub fn budget(&self) -> u64 {
        budget_for(self.max_input_tokens)
    }

    pub fn cost(&self, input_tokens: u64, output_tokens: u64) -> f64 {
        input_tokens as f64 / 1000.0 * self.cost_per_1k_input + output_tokens as f64 / 1000.0 * self.cost_per_1k_output
    }
}

fn budget_for(max_input_tokens: u64) -> u64 {
    max_input_tokens * 8 / 10
}

/// Conservative estimate: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

// ---------------------------------------------------------------------------
// provider plumbing

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
}

impl ProviderRequest {
    pub fn estimated_tokens(&self) -> u64 {
        let chars: usize = self.messages.iter().map(|m| m.content.chars().count()).sum();
        (chars as u64).div_ceil(4)
    }

    pub fn fingerprint(&self) -> String {
        store::sha256_hex(&serde_json::to_vec(self).expect("request serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// False for the offline mock, whose calls cost nothing.
    pub billable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("request for {model_id} estimated at {estimated} tokens exceeds budget {budget}")]
    OverBudget { model_id: String, estimated: u64, budget: u64 },
    #[error("{0}")]
    Io(String),
}

impl ProviderError {
    pub fn retryable(&self) -> bool {
        match self {
            ProviderError::Transport(_) => true,
            ProviderError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait Provider: Send + Sync {
    fn send(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;
}

/// Deterministic offline provider. Replies are built from the prompt text
/// alone, and every request is checked against the tier budget.
#[derive(Debug, Default)]
pub struct MockProvider {
    limits: BTreeMap<String, u64>,
    calls: AtomicU64,
    violations: AtomicU64,
    malformed: AtomicU64,
    peak_ratio_millis: AtomicU64,
}

impl MockProvider {
    pub fn new<'a>(tiers: impl IntoIterator<Item = &'a ModelTier>) -> Self {
        Self {
            limits: tiers
                .into_iter()
                .map(|t| (t.model_id.clone(), t.max_input_tokens))
                .collect(),
            ..Self::default()
        }
    }

    /// The next `n` replies ignore the output template.
    pub fn with_malformed_replies(self, n: u64) -> Self {
        self.malformed.store(n, Ordering::SeqCst);
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Requests that exceeded 80% of their model's input window.
    pub fn budget_violations(&self) -> u64 {
        self.violations.load(Ordering::SeqCst)
    }

    /// Largest estimated request size seen, as a fraction of max_input_tokens.
    pub fn peak_budget_ratio(&self) -> f64 {
        self.peak_ratio_millis.load(Ordering::SeqCst) as f64 / 1_000_000.0
    }
}

impl Provider for MockProvider {
    fn send(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let estimated = request.estimated_tokens();
        let max = *self
            .limits
            .get(&request.model_id)
            .ok_or_else(|| ProviderError::Protocol(format!("unknown model {}", request.model_id)))?;
        self.peak_ratio_millis
            .fetch_max(estimated * 1_000_000 / max.max(1), Ordering::SeqCst);
        let budget = budget_for(max);
        if estimated > budget {
            self.violations.fetch_add(1, Ordering::SeqCst);
            return Err(ProviderError::OverBudget {
                model_id: request.model_id.clone(),
                estimated,
                budget,
            });
        }
        let malformed = self
            .malformed
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        let text = if malformed {
            "Sure! Here is what I found about the project.".to_string()
        } else {
            mock::reply(request)
        };
        Ok(ProviderResponse {
            input_tokens: estimated,
            output_tokens: estimate_tokens(&text),
            text,
            billable: false,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Recorded {
    request: ProviderRequest,
    response: ProviderResponse,
}

/// Wraps a provider and writes every exchange to `<dir>/<fingerprint>.json`.
pub struct RecordingProvider {
    inner: Arc<dyn Provider>,
    dir: PathBuf,
}

impl RecordingProvider {
    pub fn new(inner: Arc<dyn Provider>, dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            inner,
            dir: dir.to_path_buf(),
        })
    }
}

impl Provider for RecordingProvider {
    fn send(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let response = self.inner.send(request)?;
        let record = Recorded {
            request: request.clone(),
            response: response.clone(),
        };
        let path = self.dir.join(format!("{}.json", request.fingerprint()));
        let body = serde_json::to_vec_pretty(&record).expect("record serializes");
        std::fs::write(&path, body).map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))?;
        Ok(response)
    }
}

/// Serves responses recorded by [`RecordingProvider`]. Replayed token counts
/// are billed at the configured rates.
pub struct ReplayProvider {
    dir: PathBuf,
}

impl ReplayProvider {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }
}

impl Provider for ReplayProvider {
    fn send(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let fp = request.fingerprint();
        let path = self.dir.join(format!("{fp}.json"));
        let raw = match std::fs::read(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(ProviderError::ReplayMiss(fp)),
            Err(e) => return Err(ProviderError::Io(format!("{}: {e}", path.display()))),
        };
        let record: Recorded =
            serde_json::from_slice(&raw).map_err(|e| ProviderError::Protocol(format!("{}: {e}", path.display())))?;
        Ok(ProviderResponse {
            billable: true,
            ..record.response
        })
    }
}

/// Chat-completion provider over HTTP JSON.
pub struct HttpProvider {
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(endpoint: &str, api_key: &str, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            api_key: api_key.to_string(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    /// Reachability only: any HTTP answer counts, no completion is requested.
    pub fn probe(&self) -> Result<(), ProviderError> {
        match self.agent.head(&self.endpoint).call() {
            Ok(_) | Err(ureq::Error::Status(..)) => Ok(()),
            Err(ureq::Error::Transport(t)) => Err(ProviderError::Transport(t.to_string())),
        }
    }
}

fn parse_completion(v: &serde_json::Value) -> Result<ProviderResponse, ProviderError> {
    let text = v
        .pointer("/choices/0/message/content")
        .or_else(|| v.get("output_text"))
        .or_else(|| v.get("text"))
        .and_then(|t| t.as_str())
        .ok_or_else(|| ProviderError::Protocol("no completion text".into()))?;
    let usage = |keys: &[&str]| {
        keys.iter()
            .find_map(|k| v.pointer(&format!("/usage/{k}")).and_then(|n| n.as_u64()))
            .ok_or_else(|| ProviderError::Protocol(format!("no usage.{}", keys[0])))
    };
    Ok(ProviderResponse {
        text: text.to_string(),
        input_tokens: usage(&["prompt_tokens", "input_tokens"])?,
        output_tokens: usage(&["completion_tokens", "output_tokens"])?,
        billable: true,
    })
}

impl Provider for HttpProvider {
    fn send(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let body = serde_json::json!({ "model": request.model_id, "messages": request.messages });
        let result = self
            .agent
            .post(&self.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        match result {
            Ok(resp) => {
                let v: serde_json::Value = resp.into_json().map_err(|e| ProviderError::Protocol(e.to_string()))?;
                parse_completion(&v)
            }
            Err(ureq::Error::Status(status, resp)) => Err(ProviderError::Http {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => Err(ProviderError::Transport(t.to_string())),
        }
    }
}

/// Bounds in-flight provider calls and paces them with a token bucket.
#[derive(Debug)]
pub struct Limiter {
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    per_second: f64,
    bucket: Mutex<(f64, Instant)>,
}

pub struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("limiter lock") -= 1;
        self.0.freed.notify_one();
    }
}

impl Limiter {
    /// `per_second <= 0` disables pacing.
    pub fn new(max_in_flight: usize, per_second: f64) -> Self {
        Self {
            max_in_flight: max_in_flight.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            per_second,
            bucket: Mutex::new((per_second.max(1.0), Instant::now())),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(usize::MAX, 0.0)
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter lock");
        while *n >= self.max_in_flight {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        drop(n);
        if self.per_second > 0.0 {
            loop {
                let wait = {
                    let mut b = self.bucket.lock().expect("bucket lock");
                    let now = Instant::now();
                    let burst = self.per_second.max(1.0);
                    b.0 = (b.0 + now.duration_since(b.1).as_secs_f64() * self.per_second).min(burst);
                    b.1 = now;
                    if b.0 >= 1.0 {
                        b.0 -= 1.0;
                        None
                    } else {
                        Some(Duration::from_secs_f64((1.0 - b.0) / self.per_second))
                    }
                };
                match wait {
                    Some(d) => std::thread::sleep(d),
                    None => break,
                }
            }
        }
        Permit(self)
    }
}

/// Runs `f` over `items` on up to `workers` threads; results keep input order.
pub fn map_concurrent<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicU64::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst) as usize;
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

// ---------------------------------------------------------------------------
// prompts

const SYSTEM: &str = include_str!("../prompts/system.txt");
const SUMMARIZE_FILE: &str = include_str!("../prompts/summarize_file.txt");
const DESCRIBE_CONTRIBUTION: &str = include_str!("../prompts/describe_contribution.txt");
const SYNTHESIZE_STUDENT: &str = include_str!("../prompts/synthesize_student.txt");
const SYNTHESIZE_TEAM: &str = include_str!("../prompts/synthesize_team.txt");
const REPAIR: &str = include_str!("../prompts/repair.txt");

/// Shipped prompt templates by name.
pub fn prompt_templates() -> [(&'static str, &'static str); 6] {
    [
        ("system", SYSTEM),
        ("summarize_file", SUMMARIZE_FILE),
        ("describe_contribution", DESCRIBE_CONTRIBUTION),
        ("synthesize_student", SYNTHESIZE_STUDENT),
        ("synthesize_team", SYNTHESIZE_TEAM),
        ("repair", REPAIR),
    ]
}

pub fn prompt_hashes() -> BTreeMap<&'static str, String> {
    prompt_templates()
        .into_iter()
        .map(|(name, body)| (name, store::sha256_hex(body.as_bytes())))
        .collect()
}

/// Single-pass `{{name}}` substitution; substituted text is never rescanned.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) => {
                let key = &after[..close];
                match values.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => out.push_str(&rest[open..open + 4 + close]),
                }
                rest = &after[close + 2..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

pub const ELISION_MARKER: &str = "[... {n} lines elided ...]";

/// First and last `n` lines with an elision marker between them.
pub fn clip_lines(text: &str, n: usize) -> String {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() <= 2 * n {
        return text.to_string();
    }
    let marker = ELISION_MARKER.replace("{n}", &(lines.len() - 2 * n).to_string());
    let mut out: Vec<&str> = lines[..n].to_vec();
    out.push(&marker);
    out.extend_from_slice(&lines[lines.len() - n..]);
    out.join("\n")
}

// ---------------------------------------------------------------------------
// domain types

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalityRow {
    pub path: String,
    pub functionality: String,
    pub difficulty: String,
    pub metrics: FileMetrics,
}

impl FunctionalityRow {
    pub fn complexity(&self) -> Option<u32> {
        matches!(self.metrics.kind, FileKind::Script | FileKind::Notebook)
            .then(|| self.metrics.complexity.as_ref().map(|c| c.file_score))
            .flatten()
    }

    pub fn to_record(&self) -> FunctionalityRecord {
        FunctionalityRecord {
            filename: self.path.clone(),
            functionality: self.functionality.clone(),
            difficulty: self.difficulty.clone(),
            byte_size: self.metrics.byte_size,
            line_count: self.metrics.line_count,
            complexity: self.complexity(),
            tag_count: self.metrics.tag_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionRow {
    pub student: StudentId,
    pub path: String,
    pub description: String,
    pub evidence: ContributionEvidence,
}

impl ContributionRow {
    pub fn to_record(&self) -> ContributionRecord {
        ContributionRecord {
            student: self.student.display_name.clone(),
            file: self.path.clone(),
            description: self.description.clone(),
            lines_owned: self.evidence.lines_owned,
            lines_added_in_window: self.evidence.lines_added_in_window,
            solo_functions: self.evidence.solo_functions.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "Technical Leader")]
    TechnicalLeader,
    #[serde(rename = "Data Engineer")]
    DataEngineer,
    #[serde(rename = "Security Engineer")]
    SecurityEngineer,
    #[serde(rename = "DevOps Engineer")]
    DevOpsEngineer,
    #[serde(rename = "Backend Engineer")]
    BackendEngineer,
    #[serde(rename = "Frontend Engineer")]
    FrontendEngineer,
    Documenter,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::TechnicalLeader,
        Role::DataEngineer,
        Role::SecurityEngineer,
        Role::DevOpsEngineer,
        Role::BackendEngineer,
        Role::FrontendEngineer,
        Role::Documenter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::TechnicalLeader => "Technical Leader",
            Role::DataEngineer => "Data Engineer",
            Role::SecurityEngineer => "Security Engineer",
            Role::DevOpsEngineer => "DevOps Engineer",
            Role::BackendEngineer => "Backend Engineer",
            Role::FrontendEngineer => "Frontend Engineer",
            Role::Documenter => "Documenter",
        }
    }

    fn parse(raw: &str) -> Option<Self> {
        let raw = raw.trim();
        Role::ALL.into_iter().find(|r| r.name().eq_ignore_ascii_case(raw))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Seniority {
    Junior,
    Senior,
}

impl Seniority {
    fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "junior" => Some(Seniority::Junior),
            "senior" => Some(Seniority::Senior),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub role: Role,
    pub seniority: Seniority,
}

impl fmt::Display for RoleAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({:?})", self.role.name(), self.seniority)
    }
}

impl RoleAssignment {
    /// Accepts `Role (Seniority)` and `Seniority Role`.
    pub fn parse(raw: &str) -> Option<Self> {
        let raw = raw.trim().trim_end_matches('.');
        if let Some((role, rest)) = raw.split_once('(') {
            return Some(Self {
                role: Role::parse(role)?,
                seniority: Seniority::parse(rest.strip_suffix(')')?)?,
            });
        }
        let (first, rest) = raw.split_once(' ')?;
        Some(Self {
            seniority: Seniority::parse(first)?,
            role: Role::parse(rest)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bullet {
    pub path: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlagReason {
    FileNotTouched,
    ZeroLines,
    CommentOnlyEvidence,
}

impl fmt::Display for FlagReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlagReason::FileNotTouched => "file-not-touched",
            FlagReason::ZeroLines => "zero-lines",
            FlagReason::CommentOnlyEvidence => "comment-only-evidence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationFlag {
    pub claim: String,
    pub path: String,
    pub reason: FlagReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidationStatus {
    Clean,
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub status: ValidationStatus,
    pub flags: Vec<ValidationFlag>,
}

impl ValidationReport {
    pub fn clean() -> Self {
        Self {
            status: ValidationStatus::Clean,
            flags: Vec::new(),
        }
    }

    pub fn flag_for(&self, path: &str) -> Option<FlagReason> {
        self.flags.iter().find(|f| f.path == path).map(|f| f.reason)
    }
}

pub const NO_CONTRIBUTION_TEXT: &str = "No recorded contributions in this window.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentSummary {
    pub student: StudentId,
    pub headline: String,
    pub per_file_bullets: Vec<Bullet>,
    pub role: Option<RoleAssignment>,
    pub validation: ValidationReport,
    /// Set for students with no commits in the window.
    pub no_contribution: bool,
}

impl StudentSummary {
    pub fn no_contribution(student: StudentId) -> Self {
        Self {
            student,
            headline: NO_CONTRIBUTION_TEXT.to_string(),
            per_file_bullets: Vec::new(),
            role: None,
            validation: ValidationReport::clean(),
            no_contribution: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamSummary {
    pub window: AnalysisWindow,
    pub narrative: String,
    pub progress_bullets: Vec<String>,
}

/// Everything the synthesis tier sees for one team and window.
#[derive(Debug, Clone, Copy)]
pub struct SynthesisBundle<'a> {
    pub roster: &'a Roster,
    pub set: &'a ContributionSet,
    pub functionality: &'a [FunctionalityRow],
    pub contributions: &'a [ContributionRow],
    pub sprint_instructions: &'a str,
    pub project_description: &'a str,
    pub roles: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("provider failed after {attempts} attempt(s): {source}")]
    Provider {
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error("{task}: request needs {estimated} tokens, budget is {budget}")]
    BudgetExceeded { task: String, estimated: u64, budget: u64 },
    #[error("{task}: reply does not follow the template after one repair: {detail}")]
    TemplateViolation { task: String, detail: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid model tier: {0}")]
    InvalidTier(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Appends one ledger entry priced at the tier's rates (zero when the
/// response was not billable).
pub fn record_usage(
    ledger: &mut CostLedger,
    tier: &ModelTier,
    run_id: &str,
    input_tokens: u64,
    output_tokens: u64,
    billable: bool,
) -> Result<LedgerEntry, StoreError> {
    let entry = LedgerEntry {
        timestamp: Utc::now(),
        run_id: run_id.to_string(),
        tier: tier.tier,
        model_id: tier.model_id.clone(),
        input_tokens,
        output_tokens,
        cost: if billable { tier.cost(input_tokens, output_tokens) } else { 0.0 },
    };
    ledger.append(entry.clone())?;
    Ok(entry)
}

// ---------------------------------------------------------------------------
// reply parsing

fn field_after<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let t = line.trim().trim_start_matches(['*', '#', ' ']);
    let head = t.get(..key.len())?;
    if !head.eq_ignore_ascii_case(key) {
        return None;
    }
    t[key.len()..].trim_start_matches('*').strip_prefix(':').map(|v| v.trim().trim_start_matches('*').trim())
}

fn single_field(text: &str, key: &str) -> Result<String, String> {
    text.lines()
        .find_map(|l| field_after(l, key))
        .filter(|v| !v.is_empty())
        .map(str::to_string)
        .ok_or_else(|| format!("missing non-empty \"{key}:\" line"))
}

fn parse_functionality(text: &str) -> Result<(String, String), String> {
    Ok((single_field(text, "Functionality")?, single_field(text, "Difficulty")?))
}

fn parse_bullet(line: &str) -> Option<&str> {
    let t = line.trim_start();
    t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")).map(str::trim)
}

type ParsedStudent = (String, Vec<Bullet>, Option<RoleAssignment>);

fn parse_student(text: &str, roles: bool) -> Result<ParsedStudent, String> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines
        .iter()
        .position(|l| field_after(l, "Summary").is_some())
        .ok_or("missing \"Summary:\" section")?;
    let contrib = lines
        .iter()
        .position(|l| field_after(l, "Contributions").is_some())
        .filter(|&c| c > start)
        .ok_or("missing \"Contributions:\" section after the summary")?;
    let mut headline = field_after(lines[start], "Summary").unwrap_or_default().to_string();
    for l in &lines[start + 1..contrib] {
        if !l.trim().is_empty() {
            if !headline.is_empty() {
                headline.push(' ');
            }
            headline.push_str(l.trim());
        }
    }
    if headline.is_empty() {
        return Err("empty summary paragraph".into());
    }
    let mut bullets = Vec::new();
    let mut role = None;
    for l in &lines[contrib + 1..] {
        if let Some(r) = field_after(l, "Role") {
            role = Some(RoleAssignment::parse(r).ok_or_else(|| format!("role {r:?} is outside the allowed roles"))?);
            continue;
        }
        if l.trim().is_empty() {
            continue;
        }
        let item = parse_bullet(l).ok_or_else(|| format!("unexpected line {:?} in contributions", l.trim()))?;
        let (path, body) = item
            .split_once(": ")
            .or_else(|| item.split_once(':'))
            .ok_or_else(|| format!("bullet {item:?} is not \"path: text\""))?;
        let path = path.trim().trim_matches('`').trim_matches('*').trim();
        if path.is_empty() || body.trim().is_empty() {
            return Err(format!("bullet {item:?} is not \"path: text\""));
        }
        bullets.push(Bullet {
            path: path.to_string(),
            text: body.trim().to_string(),
        });
    }
    match (roles, role) {
        (true, None) => Err("missing \"Role:\" line".into()),
        (false, _) => Ok((headline, bullets, None)),
        (true, role) => Ok((headline, bullets, role)),
    }
}

fn parse_team(text: &str) -> Result<(String, Vec<String>), String> {
    let lines: Vec<&str> = text.lines().collect();
    let start = lines
        .iter()
        .position(|l| field_after(l, "Overall").is_some())
        .ok_or("missing \"Overall:\" section")?;
    let progress = lines
        .iter()
        .position(|l| field_after(l, "Progress").is_some())
        .filter(|&p| p > start)
        .ok_or("missing \"Progress:\" section")?;
    let mut narrative = field_after(lines[start], "Overall").unwrap_or_default().to_string();
    for l in &lines[start + 1..progress] {
        if !l.trim().is_empty() {
            narrative.push(' ');
            narrative.push_str(l.trim());
        }
    }
    let narrative = narrative.trim().to_string();
    if narrative.is_empty() {
        return Err("empty overall narrative".into());
    }
    let bullets: Vec<String> = lines[progress + 1..]
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_bullet(l).map(str::to_string).ok_or_else(|| format!("unexpected line {:?}", l.trim())))
        .collect::<Result<_, _>>()?;
    if bullets.is_empty() {
        return Err("no progress bullets".into());
    }
    Ok((narrative, bullets))
}

// ---------------------------------------------------------------------------
// chain

/// Shared state for one run of the chain.
pub struct Chain {
    provider: Arc<dyn Provider>,
    store: Option<Arc<Store>>,
    ledger: Arc<Mutex<CostLedger>>,
    limiter: Arc<Limiter>,
    run_id: String,
    truncate_lines: usize,
    max_attempts: u32,
    provider_calls: AtomicU64,
    cache_hits: AtomicU64,
}

pub const DEFAULT_TRUNCATE_LINES: usize = 200;

impl Chain {
    pub fn new(provider: Arc<dyn Provider>, ledger: Arc<Mutex<CostLedger>>, run_id: impl Into<String>) -> Self {
        Self {
            provider,
            store: None,
            ledger,
            limiter: Arc::new(Limiter::unlimited()),
            run_id: run_id.into(),
            truncate_lines: DEFAULT_TRUNCATE_LINES,
            max_attempts: 3,
            provider_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    pub fn with_store(mut self, store: Arc<Store>) -> Self {
        self.store = Some(store);
        self
    }

    pub fn with_limiter(mut self, limiter: Arc<Limiter>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn with_truncate_lines(mut self, n: usize) -> Self {
        self.truncate_lines = n;
        self
    }

    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    fn request(tier: &ModelTier, prompt: String) -> ProviderRequest {
        ProviderRequest {
            model_id: tier.model_id.clone(),
            messages: vec![Message::system(SYSTEM), Message::user(prompt)],
        }
    }

    fn check_budget(task: &str, tier: &ModelTier, request: &ProviderRequest) -> Result<(), AgentError> {
        let estimated = request.estimated_tokens();
        if estimated > tier.budget() {
            return Err(AgentError::BudgetExceeded {
                task: task.to_string(),
                estimated,
                budget: tier.budget(),
            });
        }
        Ok(())
    }

    fn send(&self, tier: &ModelTier, request: &ProviderRequest) -> Result<String, AgentError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let result = {
                let _permit = self.limiter.acquire();
                self.provider_calls.fetch_add(1, Ordering::SeqCst);
                self.provider.send(request)
            };
            match result {
                Ok(resp) => {
                    let mut ledger = self.ledger.lock().expect("ledger lock");
                    record_usage(
                        &mut ledger,
                        tier,
                        &self.run_id,
                        resp.input_tokens,
                        resp.output_tokens,
                        resp.billable,
                    )?;
                    return Ok(resp.text);
                }
                Err(e) if e.retryable() && attempts < self.max_attempts => {
                    log::warn!("provider attempt {attempts} failed: {e}; retrying");
                    std::thread::sleep(Duration::from_millis(200 * u64::from(attempts)));
                }
                Err(source) => return Err(AgentError::Provider { attempts, source }),
            }
        }
    }

    /// Cached, budget-checked completion with one repair retry.
    fn complete<T>(
        &self,
        task: &str,
        template: &str,
        tier: &ModelTier,
        request: ProviderRequest,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, AgentError> {
        Self::check_budget(task, tier, &request)?;
        let key = CacheKey::new(
            task,
            &store::sha256_hex(format!("{SYSTEM}{template}{REPAIR}").as_bytes()),
            &tier.model_id,
            request.fingerprint().as_bytes(),
        );
        if let Some(store) = &self.store {
            if let Some(raw) = store.get(&key)? {
                if let Ok(text) = String::from_utf8(raw) {
                    if let Ok(v) = parse(&text) {
                        self.cache_hits.fetch_add(1, Ordering::SeqCst);
                        return Ok(v);
                    }
                }
            }
        }
        let first = self.send(tier, &request)?;
        let (text, value) = match parse(&first) {
            Ok(v) => (first, v),
            Err(problem) => {
                let mut repair = request.clone();
                repair.messages.push(Message::assistant(first));
                repair.messages.push(Message::user(fill(REPAIR, &[("problem", &problem)])));
                Self::check_budget(task, tier, &repair)?;
                let second = self.send(tier, &repair)?;
                match parse(&second) {
                    Ok(v) => (second, v),
                    Err(detail) => {
                        return Err(AgentError::TemplateViolation {
                            task: task.to_string(),
                            detail,
                        })
                    }
                }
            }
        };
        if let Some(store) = &self.store {
            store.put(&key, text.as_bytes())?;
        }
        Ok(value)
    }

    pub fn summarize_file(
        &self,
        tier: &ModelTier,
        path: &str,
        content: &str,
        metrics: &FileMetrics,
    ) -> Result<FunctionalityRow, AgentError> {
        if content.trim().is_empty() {
            return Ok(FunctionalityRow {
                path: path.to_string(),
                functionality: "empty file".into(),
                difficulty: "none".into(),
                metrics: metrics.clone(),
            });
        }
        let kind = serde_json::to_value(metrics.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let complexity = metrics
            .complexity
            .as_ref()
            .map(|c| c.file_score.to_string())
            .unwrap_or_else(|| "n/a".into());
        let tags = metrics.tag_count.map(|t| t.to_string()).unwrap_or_else(|| "n/a".into());
        let (lines, bytes) = (metrics.line_count.to_string(), metrics.byte_size.to_string());
        let build = |body: &str| {
            Self::request(
                tier,
                fill(
                    SUMMARIZE_FILE,
                    &[
                        ("path", path),
                        ("kind", &kind),
                        ("line_count", &lines),
                        ("byte_size", &bytes),
                        ("complexity", &complexity),
                        ("tag_count", &tags),
                        ("content", body),
                    ],
                ),
            )
        };
        let line_total = content.lines().count();
        let mut n = self.truncate_lines;
        let request = loop {
            let request = build(&clip_lines(content, n));
            if request.estimated_tokens() <= tier.budget() {
                break request;
            }
            if n == 0 {
                return Err(AgentError::BudgetExceeded {
                    task: format!("summarize_file {path}"),
                    estimated: request.estimated_tokens(),
                    budget: tier.budget(),
                });
            }
            n = n.min(line_total / 2) / 2;
        };
        let (functionality, difficulty) = self.complete("summarize_file", SUMMARIZE_FILE, tier, request, parse_functionality)?;
        Ok(FunctionalityRow {
            path: path.to_string(),
            functionality,
            difficulty,
            metrics: metrics.clone(),
        })
    }

    pub fn describe_contribution(
        &self,
        tier: &ModelTier,
        row: &FunctionalityRow,
        evidence: &ContributionEvidence,
        file_lines: u64,
    ) -> Result<ContributionRow, AgentError> {
        if !evidence.has_lines() {
            return Err(AgentError::Precondition(format!(
                "{} has no lines in {}",
                evidence.student.id, evidence.path
            )));
        }
        let solo = if evidence.solo_functions.is_empty() {
            "none".to_string()
        } else {
            evidence
                .solo_functions
                .iter()
                .map(|f| format!("{} (complexity {})", f.name, f.score))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let messages = if evidence.commit_messages.is_empty() {
            "- (none in this window)".to_string()
        } else {
            evidence
                .commit_messages
                .iter()
                .map(|m| format!("- {}", m.lines().next().unwrap_or_default()))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let complexity = row.complexity().map(|c| c.to_string()).unwrap_or_else(|| "n/a".into());
        let owned = fmt_lines(evidence.lines_owned);
        let added = fmt_lines(evidence.lines_added_in_window);
        let total = file_lines.to_string();
        let request = Self::request(
            tier,
            fill(
                DESCRIBE_CONTRIBUTION,
                &[
                    ("student", &evidence.student.display_name),
                    ("path", &row.path),
                    ("functionality", &row.functionality),
                    ("complexity", &complexity),
                    ("lines_owned", &owned),
                    ("file_lines", &total),
                    ("lines_added", &added),
                    ("solo_functions", &solo),
                    ("commit_messages", &messages),
                ],
            ),
        );
        let description = self.complete("describe_contribution", DESCRIBE_CONTRIBUTION, tier, request, |t| {
            single_field(t, "Description")
        })?;
        Ok(ContributionRow {
            student: evidence.student.clone(),
            path: row.path.clone(),
            description,
            evidence: evidence.clone(),
        })
    }

    /// One summary per roster student, ordered by display name, plus the team
    /// summary. Students without window commits get the fixed no-contribution
    /// summary and cost no provider call.
    pub fn synthesize(
        &self,
        tier: &ModelTier,
        bundle: &SynthesisBundle<'_>,
    ) -> Result<(Vec<StudentSummary>, TeamSummary), AgentError> {
        let window = &bundle.set.window;
        let window_text = format!("{} ({} to {})", window.label, window.start.to_rfc3339(), window.end.to_rfc3339());
        let mut students: Vec<&StudentId> = bundle.roster.students().collect();
        students.sort_by(|a, b| (&a.display_name, &a.id).cmp(&(&b.display_name, &b.id)));
        let functionality: BTreeMap<&str, &FunctionalityRow> =
            bundle.functionality.iter().map(|r| (r.path.as_str(), r)).collect();

        let mut summaries = Vec::new();
        for student in students {
            if bundle.set.is_zero_commit(&student.id) {
                summaries.push(StudentSummary::no_contribution(student.clone()));
                continue;
            }
            let rows: Vec<String> = bundle
                .contributions
                .iter()
                .filter(|r| r.student.id == student.id)
                .map(|r| {
                    let f = functionality.get(r.path.as_str());
                    format!(
                        "{} | {} | {} | {} | {} | {}",
                        r.path,
                        f.map_or("unknown", |f| f.functionality.as_str()),
                        f.and_then(|f| f.complexity()).map_or("n/a".to_string(), |c| c.to_string()),
                        fmt_lines(r.evidence.lines_owned),
                        fmt_lines(r.evidence.lines_added_in_window),
                        r.description
                    )
                })
                .collect();
            let rows = if rows.is_empty() {
                "(no surviving lines in the snapshot)".to_string()
            } else {
                rows.join("\n")
            };
            let role_template = if bundle.roles {
                format!(
                    "Role: <one of {}> (<Junior or Senior>)",
                    Role::ALL.map(Role::name).join(", ")
                )
            } else {
                String::new()
            };
            let request = Self::request(
                tier,
                fill(
                    SYNTHESIZE_STUDENT,
                    &[
                        ("project_description", bundle.project_description.trim()),
                        ("sprint_instructions", bundle.sprint_instructions.trim()),
                        ("window", &window_text),
                        ("student", &student.display_name),
                        ("roles", if bundle.roles { "yes" } else { "no" }),
                        ("rows", &rows),
                        ("role_template", &role_template),
                    ],
                ),
            );
            let roles = bundle.roles;
            let (headline, bullets, role) =
                self.complete("synthesize_student", SYNTHESIZE_STUDENT, tier, request, |t| parse_student(t, roles))?;
            let mut summary = StudentSummary {
                student: student.clone(),
                headline,
                per_file_bullets: bullets,
                role,
                validation: ValidationReport::clean(),
                no_contribution: false,
            };
            summary.validation = validate_summary(&summary, bundle.set);
            summaries.push(summary);
        }

        let active: Vec<&StudentSummary> = summaries.iter().filter(|s| !s.no_contribution).collect();
        if active.is_empty() {
            return Ok((
                summaries,
                TeamSummary {
                    window: window.clone(),
                    narrative: "No contributions were recorded for this window.".into(),
                    progress_bullets: Vec::new(),
                },
            ));
        }
        let students_text = active
            .iter()
            .map(|s| format!("- {}: {}", s.student.display_name, s.headline))
            .collect::<Vec<_>>()
            .join("\n");
        let file_lines: Vec<String> = bundle
            .functionality
            .iter()
            .map(|f| {
                format!(
                    "{} | {} | {}",
                    f.path,
                    f.functionality,
                    f.complexity().map_or("n/a".to_string(), |c| c.to_string())
                )
            })
            .collect();
        let build = |keep: usize| {
            let mut files = file_lines[..keep].join("\n");
            if keep < file_lines.len() {
                files.push_str(&format!("\n[... {} more files ...]", file_lines.len() - keep));
            }
            Self::request(
                tier,
                fill(
                    SYNTHESIZE_TEAM,
                    &[
                        ("project_description", bundle.project_description.trim()),
                        ("sprint_instructions", bundle.sprint_instructions.trim()),
                        ("window", &window_text),
                        ("students", &students_text),
                        ("files", &files),
                    ],
                ),
            )
        };
        let mut keep = file_lines.len();
        let mut request = build(keep);
        while request.estimated_tokens() > tier.budget() && keep > 0 {
            keep /= 2;
            request = build(keep);
        }
        let (narrative, progress_bullets) = self.complete("synthesize_team", SYNTHESIZE_TEAM, tier, request, parse_team)?;
        Ok((
            summaries,
            TeamSummary {
                window: window.clone(),
                narrative,
                progress_bullets,
            },
        ))
    }
}

/// Whole numbers print without a fraction; shares keep two decimals.
pub fn fmt_lines(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

/// Evidence for `path`, matched exactly or by a unique suffix that starts at
/// a path component.
fn find_evidence<'a>(evidence: &'a [ContributionEvidence], path: &str) -> Option<&'a ContributionEvidence> {
    let path = path.trim().trim_start_matches("./");
    if let Some(e) = evidence.iter().find(|e| e.path == path) {
        return Some(e);
    }
    let mut hits = evidence
        .iter()
        .filter(|e| e.path.ends_with(path) && e.path[..e.path.len() - path.len()].ends_with('/'));
    match (hits.next(), hits.next()) {
        (Some(e), None) => Some(e),
        _ => None,
    }
}

/// Checks every bullet against the student's attribution evidence.
pub fn validate_summary(summary: &StudentSummary, set: &ContributionSet) -> ValidationReport {
    let evidence = set.evidence(&summary.student.id);
    let flags: Vec<ValidationFlag> = summary
        .per_file_bullets
        .iter()
        .filter_map(|b| {
            let reason = match find_evidence(evidence, &b.path) {
                None => FlagReason::FileNotTouched,
                Some(e) if !e.has_lines() => FlagReason::ZeroLines,
                Some(e) if e.lines_owned > 0.0 && e.code_lines_owned <= 0.0 => FlagReason::CommentOnlyEvidence,
                Some(_) => return None,
            };
            Some(ValidationFlag {
                claim: format!("{}: {}", b.path, b.text),
                path: b.path.clone(),
                reason,
            })
        })
        .collect();
    ValidationReport {
        status: if flags.is_empty() {
            ValidationStatus::Clean
        } else {
            ValidationStatus::Flagged
        },
        flags,
    }
}

/// Canned, template-conformant replies derived from the prompt text.
mod mock {
    use super::ProviderRequest;

    fn field<'a>(prompt: &'a str, key: &str) -> &'a str {
        prompt
            .lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(": ")))
            .unwrap_or("")
            .trim()
    }

    fn block<'a>(prompt: &'a str, header: &str) -> Vec<&'a str> {
        let mut lines = prompt.lines().skip_while(|l| !l.starts_with(header)).skip(1);
        let mut out = Vec::new();
        for l in lines.by_ref() {
            if l.trim().is_empty() {
                break;
            }
            out.push(l);
        }
        out
    }

    pub fn reply(request: &ProviderRequest) -> String {
        let Some(prompt) = request
            .messages
            .iter()
            .find(|m| m.role == "user" && m.content.starts_with("task: "))
            .map(|m| m.content.as_str())
        else {
            return "Summary: nothing to do".into();
        };
        match field(prompt, "task") {
            "summarize_file" => summarize_file(prompt),
            "describe_contribution" => describe_contribution(prompt),
            "synthesize_student" => synthesize_student(prompt),
            "synthesize_team" => synthesize_team(prompt),
            other => format!("unknown task {other}"),
        }
    }

    const FEATURES: &[(&[&str], &str)] = &[
        (&["Flask("], "configures a web server"),
        (&["sqlite3", "connect("], "initializes database connections"),
        (&["redis", "cache"], "sets up a cache client"),
        (&["@app.route", ".route("], "registers HTTP routes"),
        (&["pbkdf2", "hash_password"], "hashes and verifies passwords"),
        (&["def login", "action=\"/login\""], "handles user login"),
        (&["reset"], "supports password recovery"),
        (&["FAILURES"], "locks accounts after repeated failures"),
        (&["SESSIONS", "open_session"], "manages user sessions"),
        (&["jsonify"], "returns JSON responses"),
        (&["<form"], "renders a form"),
        (&["<button"], "shows a button"),
        (&["<p>"], "displays text content"),
        (&["font-family", "padding"], "styles the page"),
        (&["heapq"], "maintains a priority queue"),
        (&["assert "], "contains automated tests"),
        (&["jobs:"], "defines a CI workflow"),
        (&["lockfileVersion"], "pins dependency versions"),
        (&["import re"], "processes text"),
    ];

    fn summarize_file(prompt: &str) -> String {
        let content = match (prompt.find("----- BEGIN FILE -----"), prompt.rfind("----- END FILE -----")) {
            (Some(a), Some(b)) if b > a => &prompt[a..b],
            _ => "",
        };
        let mut clauses: Vec<&str> = FEATURES
            .iter()
            .filter(|(keys, _)| keys.iter().any(|k| content.contains(k)))
            .map(|(_, clause)| *clause)
            .collect();
        clauses.dedup();
        let functions: Vec<&str> = content
            .lines()
            .filter_map(|l| l.trim_start().strip_prefix("def "))
            .filter_map(|l| l.split('(').next())
            .collect();
        let kind = field(prompt, "Kind");
        let mut functionality = if clauses.is_empty() {
            format!("Holds {kind} content for the project.")
        } else {
            let last = clauses.pop().unwrap_or_default();
            if clauses.is_empty() {
                format!("This file {last}.")
            } else {
                format!("This file {} and {last}.", clauses.join(", "))
            }
        };
        if !functions.is_empty() {
            let shown: Vec<&str> = functions.iter().take(6).copied().collect();
            functionality.push_str(&format!(" It defines {}.", shown.join(", ")));
        }
        let lines = field(prompt, "Lines");
        let difficulty = match field(prompt, "Complexity").parse::<u32>() {
            Ok(c) if c <= 3 => format!("Low: straightforward logic (complexity {c}) across {lines} lines."),
            Ok(c) if c <= 8 => {
                format!("Moderate: branching logic (complexity {c}) across {lines} lines that needs careful testing.")
            }
            Ok(c) => format!("High: dense control flow (complexity {c}) across {lines} lines with many edge cases."),
            Err(_) => format!("Low: mostly declarative {kind} content across {lines} lines."),
        };
        format!("Functionality: {functionality}\nDifficulty: {difficulty}")
    }

    fn describe_contribution(prompt: &str) -> String {
        let owned = field(prompt, "Lines owned at snapshot");
        let added = field(prompt, "Lines added in window");
        let solo = field(prompt, "Functions written entirely by this student");
        let messages: Vec<String> = block(prompt, "Commit messages:")
            .iter()
            .filter_map(|l| l.strip_prefix("- "))
            .filter(|m| !m.starts_with('('))
            .map(|m| format!("\"{m}\""))
            .collect();
        let mut text = format!("Wrote {owned} lines of the file ({added} added this window)");
        if !solo.is_empty() && solo != "none" {
            text.push_str(&format!("; sole author of {solo}"));
        }
        if !messages.is_empty() {
            text.push_str(&format!("; work described as {}", messages.join(", ")));
        }
        format!("Description: {text}.")
    }

    struct Focus {
        phrase: &'static str,
        role: &'static str,
        keys: &'static [&'static str],
    }

    const FOCI: &[Focus] = &[
        Focus {
            phrase: "security and authentication",
            role: "Security Engineer",
            keys: &["auth", "password", "login", "session", "token"],
        },
        Focus {
            phrase: "the user interface",
            role: "Frontend Engineer",
            keys: &[".html", ".css", ".js", "button", "form", "page"],
        },
        Focus {
            phrase: "data handling",
            role: "Data Engineer",
            keys: &[".csv", ".ipynb", "dataframe", "sql"],
        },
        Focus {
            phrase: "build and deployment automation",
            role: "DevOps Engineer",
            keys: &[".yml", ".yaml", "docker", "workflow"],
        },
        Focus {
            phrase: "project documentation",
            role: "Documenter",
            keys: &[".md", "readme", "docs/"],
        },
        Focus {
            phrase: "backend features",
            role: "Backend Engineer",
            keys: &[".py", "route", "server", "database", "api"],
        },
    ];

    fn synthesize_student(prompt: &str) -> String {
        let student = field(prompt, "Student");
        let roles = field(prompt, "Roles requested") == "yes";
        let rows: Vec<Vec<&str>> = block(prompt, "Files this student contributed to")
            .iter()
            .filter(|l| !l.starts_with('('))
            .map(|l| l.splitn(6, " | ").collect::<Vec<_>>())
            .filter(|r| r.len() == 6)
            .collect();
        let mut scores: Vec<(usize, usize)> = FOCI
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let hits = rows
                    .iter()
                    .filter(|r| {
                        let text = format!("{} {}", r[0], r[1]).to_lowercase();
                        f.keys.iter().any(|k| text.contains(k))
                    })
                    .count();
                (i, hits)
            })
            .filter(|(_, h)| *h > 0)
            .collect();
        scores.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let added: f64 = rows.iter().filter_map(|r| r[4].parse::<f64>().ok()).sum();

        let mut out = String::new();
        if rows.is_empty() {
            out.push_str(&format!(
                "Summary: {student} committed work this window, but none of it survives in the current snapshot.\n"
            ));
        } else {
            let focus = scores.first().map_or("general project work", |(i, _)| FOCI[*i].phrase);
            out.push_str(&format!(
                "Summary: {student} focused intensely on {focus} this window, contributing to {} file{} with {} lines added.",
                rows.len(),
                if rows.len() == 1 { "" } else { "s" },
                super::fmt_lines(added)
            ));
            if let Some((i, _)) = scores.get(1) {
                out.push_str(&format!(" The work also touched {}.", FOCI[*i].phrase));
            }
            out.push('\n');
        }
        out.push_str("Contributions:\n");
        for r in &rows {
            out.push_str(&format!("- {}: {}\n", r[0], r[5]));
        }
        if roles {
            let role = if scores.len() >= 3 && rows.len() >= 5 {
                "Technical Leader"
            } else {
                scores.first().map_or("Backend Engineer", |(i, _)| FOCI[*i].role)
            };
            let seniority = if added >= 30.0 { "Senior" } else { "Junior" };
            out.push_str(&format!("Role: {role} ({seniority})\n"));
        }
        out
    }

    fn synthesize_team(prompt: &str) -> String {
        let students = block(prompt, "Student focus this window:");
        let files = block(prompt, "Files (path | functionality | complexity):");
        let window = field(prompt, "Window");
        let label = window.split(' ').next().unwrap_or(window);
        let mut out = format!(
            "Overall: During {label} the team advanced the project across {} file{}, with {} student{} contributing work crucial for the project's advancement.\nProgress:\n",
            files.len(),
            if files.len() == 1 { "" } else { "s" },
            students.len(),
            if students.len() == 1 { "" } else { "s" },
        );
        for s in &students {
            let s = s.trim_start_matches("- ");
            let (name, headline) = s.split_once(": ").unwrap_or((s, ""));
            let focus = headline
                .split("focused intensely on ")
                .nth(1)
                .and_then(|r| r.split(" this window").next())
                .unwrap_or("work that no longer survives in the snapshot");
            out.push_str(&format!("- {name} advanced {focus}.\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::load_roster;
    use crate::ingest::AnalysisWindow;
    use chrono::TimeZone;

    fn tier(kind: TierKind, max: u64) -> ModelTier {
        ModelTier {
            tier: kind,
            model_id: format!("{kind}-model"),
            max_input_tokens: max,
            cost_per_1k_input: 0.15,
            cost_per_1k_output: 0.6,
        }
    }

    fn setup(mock: Arc<MockProvider>) -> (Chain, Arc<Mutex<CostLedger>>) {
        let ledger = Arc::new(Mutex::new(CostLedger::in_memory()));
        (Chain::new(mock, ledger.clone(), "test"), ledger)
    }

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
        assert_eq!(estimate_tokens("éééé"), 1);
    }

    #[test]
    fn record_usage_arithmetic() {
        let mut ledger = CostLedger::in_memory();
        let t = tier(TierKind::Analysis, 1000);
        let e = record_usage(&mut ledger, &t, "r", 0, 0, true).unwrap();
        assert_eq!(e.cost, 0.0);
        let e = record_usage(&mut ledger, &t, "r", 10_000, 0, true).unwrap();
        assert!((e.cost - 1.5).abs() < 1e-12);
        let free = record_usage(&mut ledger, &t, "r", 10_000, 10_000, false).unwrap();
        assert_eq!(free.cost, 0.0);
        assert!((ledger.total_cost() - 1.5).abs() < 1e-12);
        assert_eq!(ledger.entries().len(), 3);
    }

    #[test]
    fn fill_is_single_pass() {
        assert_eq!(fill("a {{x}} b {{y}}", &[("x", "{{y}}"), ("y", "2")]), "a {{y}} b 2");
        assert_eq!(fill("{{missing}}", &[]), "{{missing}}");
    }

    #[test]
    fn clipping_keeps_head_and_tail() {
        let text: String = (1..=10).map(|i| format!("l{i}\n")).collect();
        assert_eq!(clip_lines(&text, 5), text);
        assert_eq!(clip_lines(&text, 2), "l1\nl2\n[... 6 lines elided ...]\nl9\nl10");
        assert_eq!(clip_lines(&text, 0), "[... 10 lines elided ...]");
    }

    #[test]
    fn role_parsing_is_closed() {
        let r = RoleAssignment::parse("Security Engineer (Senior)").unwrap();
        assert_eq!((r.role, r.seniority), (Role::SecurityEngineer, Seniority::Senior));
        assert_eq!(RoleAssignment::parse("junior documenter").unwrap().role, Role::Documenter);
        assert!(RoleAssignment::parse("Chief Vibes Officer (Senior)").is_none());
        assert!(RoleAssignment::parse("Backend Engineer (Mid)").is_none());
        assert_eq!(r.to_string(), "Security Engineer (Senior)");
    }

    #[test]
    fn student_reply_parsing() {
        let text = "Summary: Ana built login.\nContributions:\n- `auth.py`: login flow\n- web/a.html: form\nRole: Senior Security Engineer\n";
        let (h, b, r) = parse_student(text, true).unwrap();
        assert_eq!(h, "Ana built login.");
        assert_eq!(b[0], Bullet { path: "auth.py".into(), text: "login flow".into() });
        assert_eq!(b.len(), 2);
        assert_eq!(r.unwrap().role, Role::SecurityEngineer);
        assert!(parse_student(text, false).unwrap().2.is_none());
        assert!(parse_student("Contributions:\n- a: b", false).is_err());
        assert!(parse_student("Summary: x\nContributions:\n- a: b\n", true).is_err());
        assert!(parse_student("Summary: x\nContributions:\nfree text\n", false).is_err());
    }

    #[test]
    fn empty_file_skips_provider() {
        let mock = Arc::new(MockProvider::new([&tier(TierKind::Analysis, 1000)]));
        let (chain, ledger) = setup(mock.clone());
        let row = chain
            .summarize_file(&tier(TierKind::Analysis, 1000), "x.py", "  \n", &FileMetrics::compute("x.py", b"  \n"))
            .unwrap();
        assert_eq!((row.functionality.as_str(), row.difficulty.as_str()), ("empty file", "none"));
        assert_eq!(mock.calls(), 0);
        assert!(ledger.lock().unwrap().entries().is_empty());
    }

    #[test]
    fn large_files_are_clipped_to_budget() {
        let t = tier(TierKind::Analysis, 2000);
        let mock = Arc::new(MockProvider::new([&t]));
        let (chain, _) = setup(mock.clone());
        let content: String = (0..3000).map(|i| format!("x_{i} = {i}\n")).collect();
        let row = chain
            .summarize_file(&t, "big.py", &content, &FileMetrics::compute("big.py", content.as_bytes()))
            .unwrap();
        assert!(row.functionality.starts_with("Holds") || row.functionality.starts_with("This"));
        assert_eq!(mock.budget_violations(), 0);
        assert!(mock.peak_budget_ratio() <= 0.8);

        let tiny = tier(TierKind::Analysis, 50);
        let mock = Arc::new(MockProvider::new([&tiny]));
        let (chain, _) = setup(mock.clone());
        let err = chain
            .summarize_file(&tiny, "big.py", &content, &FileMetrics::compute("big.py", content.as_bytes()))
            .unwrap_err();
        assert!(matches!(err, AgentError::BudgetExceeded { .. }));
        assert_eq!(mock.calls(), 0);
    }

    #[test]
    fn mock_flags_oversized_requests() {
        let t = tier(TierKind::Analysis, 10);
        let mock = MockProvider::new([&t]);
        let req = ProviderRequest {
            model_id: t.model_id.clone(),
            messages: vec![Message::user("x".repeat(40))],
        };
        assert!(matches!(mock.send(&req), Err(ProviderError::OverBudget { .. })));
        assert_eq!(mock.budget_violations(), 1);
    }

    #[test]
    fn one_repair_retry() {
        let t = tier(TierKind::Analysis, 100_000);
        let metrics = FileMetrics::compute("a.py", b"def f():\n    return 1\n");
        let mock = Arc::new(MockProvider::new([&t]).with_malformed_replies(1));
        let (chain, ledger) = setup(mock.clone());
        chain.summarize_file(&t, "a.py", "def f():\n    return 1\n", &metrics).unwrap();
        assert_eq!(mock.calls(), 2);
        assert_eq!(ledger.lock().unwrap().entries().len(), 2);

        let mock = Arc::new(MockProvider::new([&t]).with_malformed_replies(2));
        let (chain, _) = setup(mock.clone());
        let err = chain.summarize_file(&t, "a.py", "def f():\n    return 1\n", &metrics).unwrap_err();
        assert!(matches!(err, AgentError::TemplateViolation { .. }));
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn cached_rerun_makes_no_calls() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(dir.path()).unwrap());
        let t = tier(TierKind::Analysis, 100_000);
        let metrics = FileMetrics::compute("a.py", b"def f():\n    return 1\n");
        let mock = Arc::new(MockProvider::new([&t]));
        let (chain, ledger) = setup(mock.clone());
        let chain = chain.with_store(store.clone());
        let first = chain.summarize_file(&t, "a.py", "def f():\n    return 1\n", &metrics).unwrap();
        let second = chain.summarize_file(&t, "a.py", "def f():\n    return 1\n", &metrics).unwrap();
        assert_eq!(first, second);
        assert_eq!(mock.calls(), 1);
        assert_eq!(chain.cache_hits(), 1);
        assert_eq!(ledger.lock().unwrap().entries().len(), 1);
    }

    fn evidence(student: &StudentId, path: &str, owned: f64, code: f64) -> ContributionEvidence {
        ContributionEvidence {
            student: student.clone(),
            path: path.into(),
            lines_owned: owned,
            lines_added_in_window: owned,
            code_lines_owned: code,
            commit_messages: Vec::new(),
            solo_functions: Vec::new(),
        }
    }

    #[test]
    fn validator_flags() {
        let ana = StudentId::new("ana", "Ana");
        let window = AnalysisWindow::new(
            Utc.with_ymd_and_hms(2024, 3, 4, 0, 0, 0).unwrap(),
            Utc.with_ymd_and_hms(2024, 3, 11, 0, 0, 0).unwrap(),
            "week-1",
        )
        .unwrap();
        let mut per_student = BTreeMap::new();
        per_student.insert(
            "ana".to_string(),
            vec![
                evidence(&ana, "src/app.py", 5.0, 4.0),
                evidence(&ana, "models.py", 1.0, 0.0),
                evidence(&ana, "gone.py", 0.0, 0.0),
            ],
        );
        let set = ContributionSet {
            window,
            snapshot_commit: None,
            per_student,
            zero_commit_students: Vec::new(),
            active_students: vec![ana.clone()],
            unmapped_authors: Vec::new(),
            file_line_counts: BTreeMap::new(),
        };
        let bullet = |p: &str| Bullet { path: p.into(), text: "did things".into() };
        let mut summary = StudentSummary {
            student: ana.clone(),
            headline: "h".into(),
            per_file_bullets: vec![bullet("app.py"), bullet("src/app.py")],
            role: None,
            validation: ValidationReport::clean(),
            no_contribution: false,
        };
        assert_eq!(validate_summary(&summary, &set), ValidationReport::clean());
        summary.per_file_bullets = vec![bullet("views.py"), bullet("models.py"), bullet("gone.py"), bullet("pp.py")];
        let report = validate_summary(&summary, &set);
        assert_eq!(report.status, ValidationStatus::Flagged);
        let reasons: Vec<FlagReason> = report.flags.iter().map(|f| f.reason).collect();
        assert_eq!(
            reasons,
            vec![
                FlagReason::FileNotTouched,
                FlagReason::CommentOnlyEvidence,
                FlagReason::ZeroLines,
                FlagReason::FileNotTouched
            ]
        );
        let _ = load_roster("");
    }
}
