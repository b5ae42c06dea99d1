//! The `contribsum` command line: `analyze`, `check`, `cost` and `render`.

pub mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{TimeZone, Utc};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use contribsum_core::agents::{
    map_concurrent, prompt_hashes, prompt_templates, Chain, HttpProvider, Limiter, MockProvider, Provider,
    RecordingProvider, ReplayProvider,
};
use contribsum_core::attribution::AttributionOptions;
use contribsum_core::identity::{coauthors_of, Resolution};
use contribsum_core::ingest::{list_commits, open_repo, AnalysisWindow};
use contribsum_core::pipeline::{rerender, run_team, RunSettings, TeamInput, TeamOutcome};
use contribsum_core::store::{self, ledger_report, CostLedger, Store};

use config::{ConfigError, ProviderMode, RawConfig, RunConfig, WindowSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "contribsum", version, about = "Per-student contribution reports for team repositories")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Attribute, summarize and report one window for every team.
    Analyze(AnalyzeArgs),
    /// Pre-flight checks without any completion calls.
    Check(CheckArgs),
    /// Print the cost ledger.
    Cost(CostArgs),
    /// Rewrite report.md and delta.md from stored report.json files.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
struct WindowArgs {
    /// Week number counted from run.sprint_start.
    #[arg(long, conflicts_with_all = ["start", "end"])]
    week: Option<u32>,
    /// Window start (RFC 3339 or YYYY-MM-DD), inclusive.
    #[arg(long, requires = "end")]
    start: Option<String>,
    /// Window end, exclusive.
    #[arg(long, requires = "start")]
    end: Option<String>,
    /// Output label for a --start/--end window.
    #[arg(long)]
    label: Option<String>,
}

impl WindowArgs {
    fn spec(&self) -> Result<WindowSpec, ConfigError> {
        match (self.week, &self.start, &self.end) {
            (Some(n), _, _) => Ok(WindowSpec::Week(n)),
            (None, Some(s), Some(e)) => Ok(WindowSpec::Range {
                start: config::parse_instant(s)?,
                end: config::parse_instant(e)?,
                label: self.label.clone(),
            }),
            _ => Err(ConfigError("give --week N or --start/--end".into())),
        }
    }
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    /// Ask for a role and seniority per student.
    #[arg(long, conflicts_with = "no_roles")]
    roles: bool,
    #[arg(long)]
    no_roles: bool,
    #[arg(long, conflicts_with = "no_coauthor_split")]
    coauthor_split: bool,
    /// Credit co-authored lines to the commit author only.
    #[arg(long)]
    no_coauthor_split: bool,
    /// Report an unmerged branch's work in a separate section.
    #[arg(long = "include-branch")]
    include_branch: Vec<String>,
    /// Extra exclude glob.
    #[arg(long = "exclude")]
    exclude: Vec<String>,
    #[arg(long, value_enum)]
    provider: Option<ProviderMode>,
    #[arg(long)]
    recordings: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    state: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
    /// Only these team ids.
    #[arg(long = "team")]
    team: Vec<String>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long, value_enum)]
    provider: Option<ProviderMode>,
}

#[derive(Debug, Args)]
struct CostArgs {
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    state: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long, short)]
    config: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn absolute(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    }
}

fn read_raw(path: &Path) -> Result<(RawConfig, PathBuf), ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    let raw = RawConfig::parse(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let base = absolute(path).parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((raw, base))
}

fn resolve(raw: RawConfig, base: &Path) -> Result<RunConfig, ConfigError> {
    config::resolve(raw, base, std::env::var(config::API_KEY_ENV).ok())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => cmd_analyze(a, out, err),
        Command::Check(a) => cmd_check(a, out, err),
        Command::Cost(a) => cmd_cost(a, out),
        Command::Render(a) => cmd_render(a, out, err),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "config error: {e}");
            EXIT_CONFIG
        }
    }
}

#[derive(Debug, Serialize)]
struct TeamStatus {
    team: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    outcome: Option<TeamOutcome>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    run_id: &'a str,
    command: &'a str,
    started_at: String,
    finished_at: String,
    window: &'a AnalysisWindow,
    config: RawConfig,
    prompt_hashes: BTreeMap<&'static str, String>,
    provider_calls: u64,
    cache_hits: u64,
    cost: f64,
    teams: Vec<TeamStatus>,
}

fn cmd_analyze(args: AnalyzeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, ConfigError> {
    let (mut raw, base) = read_raw(&args.config)?;
    let run = &mut raw.run;
    if args.roles {
        run.roles = true;
    }
    if args.no_roles {
        run.roles = false;
    }
    if args.coauthor_split {
        run.coauthor_split = true;
    }
    if args.no_coauthor_split {
        run.coauthor_split = false;
    }
    run.include_branches.extend(args.include_branch.iter().cloned());
    run.excludes.extend(args.exclude.iter().cloned());
    if let Some(p) = args.provider {
        run.provider = p;
    }
    if let Some(p) = &args.recordings {
        run.recordings_dir = absolute(p);
    }
    if let Some(p) = &args.out {
        run.out_dir = absolute(p);
    }
    if let Some(p) = &args.state {
        run.state_dir = absolute(p);
    }
    if let Some(n) = args.concurrency {
        run.concurrency = n;
    }
    if !args.team.is_empty() {
        if let Some(missing) = args.team.iter().find(|t| !raw.teams.iter().any(|c| &c.id == *t)) {
            return Err(ConfigError(format!("--team {missing}: no such team in the config")));
        }
        raw.teams.retain(|t| args.team.contains(&t.id));
    }
    let cfg = resolve(raw, &base)?;
    let window = cfg.window(&args.window.spec()?)?;
    let run = cfg.run();

    let started = Utc::now();
    let run_id = format!("{}-{}", window.label, started.format("%Y%m%dT%H%M%S%.3fZ"));
    let mock = Arc::new(MockProvider::new([&cfg.analysis, &cfg.synthesis]));
    let http = || -> Arc<dyn Provider> {
        Arc::new(HttpProvider::new(
            &run.endpoint,
            cfg.api_key.as_deref().unwrap_or_default(),
            Duration::from_secs(120),
        ))
    };
    let provider: Arc<dyn Provider> = match run.provider {
        ProviderMode::Mock => mock.clone(),
        ProviderMode::Replay => Arc::new(ReplayProvider::new(&cfg.recordings_dir)),
        ProviderMode::Live => http(),
        ProviderMode::Record => match RecordingProvider::new(http(), &cfg.recordings_dir) {
            Ok(p) => Arc::new(p),
            Err(e) => {
                let _ = writeln!(err, "cannot create {}: {e}", cfg.recordings_dir.display());
                return Ok(EXIT_PARTIAL);
            }
        },
    };
    let (store, ledger) = match (Store::open(&cfg.state_dir), CostLedger::open(&cfg.state_dir)) {
        (Ok(s), Ok(l)) => (Arc::new(s), l),
        (Err(e), _) => {
            let _ = writeln!(err, "state directory: {e}");
            return Ok(EXIT_PARTIAL);
        }
        (_, Err(e)) => {
            let _ = writeln!(err, "state directory: {e}");
            return Ok(EXIT_PARTIAL);
        }
    };
    let before = ledger.entries().len();
    let ledger = Arc::new(Mutex::new(ledger));
    let chain = Chain::new(provider, ledger.clone(), run_id.clone())
        .with_store(store.clone())
        .with_limiter(Arc::new(Limiter::new(run.concurrency, run.requests_per_second)));
    let settings = RunSettings {
        window: window.clone(),
        sprint_instructions: cfg.sprint_instructions.clone(),
        roles: run.roles,
        options: AttributionOptions {
            coauthor_split: run.coauthor_split,
            excludes: cfg.excludes.clone(),
            ..AttributionOptions::default()
        },
        include_branches: run.include_branches.clone(),
        analysis: cfg.analysis.clone(),
        synthesis: cfg.synthesis.clone(),
        workers: run.concurrency,
        out_dir: cfg.out_dir.clone(),
    };

    let results = map_concurrent(&cfg.teams, run.team_concurrency, |t| {
        let input = TeamInput {
            id: t.id.clone(),
            repo_path: t.path.clone(),
            branch: t.branch.clone(),
            roster: t.roster.clone(),
            project_description: t.project_description.clone(),
        };
        run_team(&input, &settings, &chain)
    });

    let mut statuses = Vec::new();
    let mut failed = 0;
    for (team, result) in cfg.teams.iter().zip(results) {
        match result {
            Ok(outcome) => {
                let _ = writeln!(
                    out,
                    "{}: ok -> {}{}",
                    team.id,
                    outcome.dir.display(),
                    if outcome.flagged { " (flagged claims, see Warnings)" } else { "" }
                );
                statuses.push(TeamStatus {
                    team: team.id.clone(),
                    status: "ok",
                    error: None,
                    outcome: Some(outcome),
                });
            }
            Err(e) => {
                failed += 1;
                let _ = writeln!(err, "{}: FAILED: {e}", team.id);
                statuses.push(TeamStatus {
                    team: team.id.clone(),
                    status: "failed",
                    error: Some(e.to_string()),
                    outcome: None,
                });
            }
        }
    }
    for w in store.warnings() {
        let _ = writeln!(err, "warning: {w}");
    }
    let ledger = ledger.lock().expect("ledger lock");
    let run_cost: f64 = ledger.entries()[before..].iter().map(|e| e.cost).sum();
    let _ = writeln!(
        out,
        "{} provider call(s), {} cache hit(s), cost ${run_cost:.4}",
        chain.provider_calls(),
        chain.cache_hits()
    );
    if run.provider == ProviderMode::Mock && mock.budget_violations() > 0 {
        let _ = writeln!(err, "{} request(s) exceeded the token budget", mock.budget_violations());
    }

    let manifest = Manifest {
        run_id: &run_id,
        command: "analyze",
        started_at: started.to_rfc3339(),
        finished_at: Utc::now().to_rfc3339(),
        window: &window,
        config: cfg.raw.redacted(),
        prompt_hashes: prompt_hashes(),
        provider_calls: chain.provider_calls(),
        cache_hits: chain.cache_hits(),
        cost: run_cost,
        teams: statuses,
    };
    let path = cfg.out_dir.join(format!("manifest-{}.json", window.label));
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    if let Err(e) = std::fs::create_dir_all(&cfg.out_dir).and_then(|_| std::fs::write(&path, body)) {
        let _ = writeln!(err, "cannot write {}: {e}", path.display());
        return Ok(EXIT_PARTIAL);
    }
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn cmd_check(args: CheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, ConfigError> {
    let (mut raw, base) = read_raw(&args.config)?;
    if let Some(p) = args.provider {
        raw.run.provider = p;
    }
    let cfg = resolve(raw, &base)?;
    let all_time = AnalysisWindow::new(
        Utc.timestamp_opt(0, 0).single().expect("epoch"),
        Utc.with_ymd_and_hms(9999, 1, 1, 0, 0, 0).single().expect("far future"),
        "all",
    )
    .expect("valid window");
    let (mut errors, mut warnings) = (0, 0);
    for team in &cfg.teams {
        let repo = match open_repo(&team.path, team.branch.as_deref()) {
            Ok(r) => r,
            Err(e) => {
                errors += 1;
                let _ = writeln!(err, "error: {}: {e}", team.id);
                continue;
            }
        };
        let commits = match list_commits(&repo, &all_time) {
            Ok(c) => c,
            Err(e) => {
                errors += 1;
                let _ = writeln!(err, "error: {}: {e}", team.id);
                continue;
            }
        };
        let mut unmapped = std::collections::BTreeSet::new();
        for c in &commits {
            if team.roster.resolve(&c.author_name, &c.author_email) == Resolution::Unknown {
                unmapped.insert(format!("{} <{}>", c.author_name, c.author_email));
            }
            for tag in coauthors_of(c) {
                if team.roster.resolve(&tag.name, &tag.email) == Resolution::Unknown {
                    unmapped.insert(format!("{} <{}> (co-author)", tag.name, tag.email));
                }
            }
        }
        let _ = writeln!(
            out,
            "{}: {} commit(s) on {}, {} student(s) in roster",
            team.id,
            commits.len(),
            repo.default_branch(),
            team.roster.len()
        );
        if !unmapped.is_empty() {
            let _ = writeln!(out, "  unmapped authors:");
            for a in &unmapped {
                warnings += 1;
                let _ = writeln!(out, "    {a}");
            }
        }
        match repo.unmerged_branches() {
            Ok(branches) => {
                for (b, n) in branches {
                    let _ = writeln!(out, "  unmerged branch {b}: {n} commit(s) not counted by default");
                }
            }
            Err(e) => {
                errors += 1;
                let _ = writeln!(err, "error: {}: {e}", team.id);
            }
        }
    }
    let missing: Vec<&str> = prompt_templates()
        .into_iter()
        .filter(|(_, body)| body.trim().is_empty())
        .map(|(name, _)| name)
        .collect();
    if missing.is_empty() {
        let _ = writeln!(out, "prompt templates: {} present", prompt_templates().len());
    } else {
        errors += 1;
        let _ = writeln!(err, "error: empty prompt templates: {}", missing.join(", "));
    }
    match cfg.run().provider {
        ProviderMode::Live | ProviderMode::Record => {
            let http = HttpProvider::new(
                &cfg.run().endpoint,
                cfg.api_key.as_deref().unwrap_or_default(),
                Duration::from_secs(10),
            );
            match http.probe() {
                Ok(()) => {
                    let _ = writeln!(out, "provider endpoint reachable");
                }
                Err(e) => {
                    errors += 1;
                    let _ = writeln!(err, "error: provider endpoint unreachable: {e}");
                }
            }
        }
        ProviderMode::Replay if !cfg.recordings_dir.is_dir() => {
            errors += 1;
            let _ = writeln!(err, "error: recordings directory {} missing", cfg.recordings_dir.display());
        }
        _ => {}
    }
    if errors > 0 {
        let _ = writeln!(out, "FAILED: {errors} error(s), {warnings} warning(s)");
        return Ok(EXIT_PARTIAL);
    }
    if warnings > 0 {
        let _ = writeln!(out, "ok with {warnings} warning(s)");
    } else {
        let _ = writeln!(out, "ok");
    }
    Ok(EXIT_OK)
}

fn cmd_cost(args: CostArgs, out: &mut dyn Write) -> Result<i32, ConfigError> {
    let fallback = match (&args.state, &args.config) {
        (Some(s), _) => absolute(s),
        (None, Some(c)) => {
            let (raw, base) = read_raw(c)?;
            base.join(raw.run.state_dir)
        }
        (None, None) => absolute(Path::new(".contribsum")),
    };
    let dir = store::state_dir(&fallback);
    let ledger = if dir.join("ledger.jsonl").exists() {
        match CostLedger::open(&dir) {
            Ok(l) => l,
            Err(e) => {
                let _ = writeln!(out, "cannot read ledger: {e}");
                return Ok(EXIT_PARTIAL);
            }
        }
    } else {
        CostLedger::in_memory()
    };
    let _ = write!(out, "{}", ledger_report(&ledger));
    Ok(EXIT_OK)
}

fn cmd_render(args: RenderArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, ConfigError> {
    let (mut raw, base) = read_raw(&args.config)?;
    if let Some(p) = &args.out {
        raw.run.out_dir = absolute(p);
    }
    let cfg = resolve(raw, &base)?;
    let window = cfg.window(&args.window.spec()?)?;
    let mut failed = 0;
    for team in &cfg.teams {
        match rerender(&cfg.out_dir, &team.id, &window.label) {
            Ok(o) => {
                let _ = writeln!(out, "{}: rendered -> {}", team.id, o.dir.display());
            }
            Err(e) => {
                failed += 1;
                let _ = writeln!(err, "{}: FAILED: {e}", team.id);
            }
        }
    }
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}
