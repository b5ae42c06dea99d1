//! One team, one window: attribution, tables, summaries and report, written
//! under `<out>/<team>/<window-label>/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{map_concurrent, AgentError, Chain, FunctionalityRow, ModelTier, SynthesisBundle};
use crate::attribution::{branch_supplement, build_contribution_set, AttributionError, AttributionOptions};
use crate::identity::Roster;
use crate::ingest::{open_repo, snapshot, AnalysisWindow, IngestError};
use crate::metrics::{notebook_script, FileKind, FileMetrics};
use crate::report::{diff_windows, render, RenderMeta, ReportDocument};
use crate::store::sha256_hex;
use crate::tables::{to_csv_bytes, ContributionTable, FunctionalityTable, TableError};

pub const FUNCTIONALITY_CSV: &str = "functionality.csv";
pub const CONTRIBUTION_CSV: &str = "contribution.csv";
pub const REPORT_MD: &str = "report.md";
pub const REPORT_JSON: &str = "report.json";
pub const CONTRIBUTIONS_JSON: &str = "contributions.json";
pub const DELTA_MD: &str = "delta.md";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error("{stage}: {source}")]
    Agent {
        stage: String,
        #[source]
        source: AgentError,
    },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    BadArtifact { path: PathBuf, message: String },
}

#[derive(Debug, Clone)]
pub struct TeamInput {
    pub id: String,
    pub repo_path: PathBuf,
    pub branch: Option<String>,
    pub roster: Roster,
    pub project_description: String,
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub window: AnalysisWindow,
    pub sprint_instructions: String,
    pub roles: bool,
    pub options: AttributionOptions,
    pub include_branches: Vec<String>,
    pub analysis: ModelTier,
    pub synthesis: ModelTier,
    /// Concurrent provider-bound tasks within one team.
    pub workers: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeamOutcome {
    pub team: String,
    pub dir: PathBuf,
    /// Artifact file name to sha256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
    pub flagged: bool,
}

pub fn window_dir(out_dir: &Path, team: &str, label: &str) -> PathBuf {
    out_dir.join(team).join(label)
}

/// `week-3` -> `week-2`; other labels have no predecessor.
pub fn previous_label(label: &str) -> Option<String> {
    let n: u32 = label.strip_prefix("week-")?.parse().ok()?;
    (n > 1).then(|| format!("week-{}", n - 1))
}

fn write(dir: &Path, name: &str, bytes: &[u8], artifacts: &mut BTreeMap<String, String>) -> Result<(), PipelineError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|source| PipelineError::Io { path, source })?;
    artifacts.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

fn agent(stage: impl Into<String>) -> impl FnOnce(AgentError) -> PipelineError {
    let stage = stage.into();
    move |source| PipelineError::Agent { stage, source }
}

/// Text the analysis tier sees for a file: notebook code cells, or the
/// decoded file.
fn prompt_text(kind: FileKind, content: &[u8]) -> String {
    let text = String::from_utf8_lossy(content).into_owned();
    if kind == FileKind::Notebook {
        if let Ok(script) = notebook_script(&text) {
            return script;
        }
    }
    text
}

pub fn run_team(team: &TeamInput, settings: &RunSettings, chain: &Chain) -> Result<TeamOutcome, PipelineError> {
    let repo = open_repo(&team.repo_path, team.branch.as_deref())?;
    let set = build_contribution_set(&repo, &settings.window, &team.roster, &settings.options)?;

    let files: Vec<(String, Vec<u8>)> = match &set.snapshot_commit {
        Some(at) => snapshot(&repo, at)?
            .into_iter()
            .filter(|(p, _)| set.file_line_counts.contains_key(p))
            .collect(),
        None => Vec::new(),
    };
    let summarized = map_concurrent(&files, settings.workers, |(path, content)| {
        let metrics = FileMetrics::compute(path, content);
        let text = prompt_text(metrics.kind, content);
        chain
            .summarize_file(&settings.analysis, path, &text, &metrics)
            .map_err(agent(format!("summarize_file {path}")))
    });
    let functionality: Vec<FunctionalityRow> = summarized.into_iter().collect::<Result<_, _>>()?;
    let by_path: BTreeMap<&str, &FunctionalityRow> = functionality.iter().map(|r| (r.path.as_str(), r)).collect();

    // Files deleted before the snapshot can still carry window churn.
    let gone = |path: &str| FunctionalityRow {
        path: path.to_string(),
        functionality: "File no longer present in the snapshot.".into(),
        difficulty: "none".into(),
        metrics: FileMetrics::compute(path, b""),
    };
    let work: Vec<_> = team
        .roster
        .students()
        .flat_map(|s| set.evidence(&s.id).iter())
        .filter(|e| e.has_lines())
        .collect();
    let described = map_concurrent(&work, settings.workers, |e| {
        let row = by_path.get(e.path.as_str()).map_or_else(|| gone(&e.path), |r| (*r).clone());
        let total = set.file_line_counts.get(&e.path).copied().unwrap_or(0);
        chain
            .describe_contribution(&settings.analysis, &row, e, total)
            .map_err(agent(format!("describe_contribution {} {}", e.student.id, e.path)))
    });
    let contributions: Vec<_> = described.into_iter().collect::<Result<_, _>>()?;

    let (summaries, team_summary) = chain
        .synthesize(
            &settings.synthesis,
            &SynthesisBundle {
                roster: &team.roster,
                set: &set,
                functionality: &functionality,
                contributions: &contributions,
                sprint_instructions: &settings.sprint_instructions,
                project_description: &team.project_description,
                roles: settings.roles,
            },
        )
        .map_err(agent("synthesize"))?;

    let excluded = repo.unmerged_branches()?;
    let mut supplements = Vec::new();
    let mut warnings = Vec::new();
    for branch in &settings.include_branches {
        match repo.branch_tip(branch) {
            Ok(_) => supplements.push(branch_supplement(&repo, branch, &team.roster, &settings.options)?),
            Err(IngestError::BranchNotFound(_)) => {
                warnings.push(format!("Requested branch `{branch}` does not exist in this repository"))
            }
            Err(e) => return Err(e.into()),
        }
    }
    let doc = render(
        &summaries,
        &team_summary,
        &RenderMeta {
            team: &team.id,
            set: &set,
            roles: settings.roles,
            excluded_branches: &excluded,
            supplements: &supplements,
            extra_warnings: &warnings,
        },
    );

    let dir = window_dir(&settings.out_dir, &team.id, &settings.window.label);
    std::fs::create_dir_all(&dir).map_err(|source| PipelineError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut artifacts = BTreeMap::new();
    let ftable = FunctionalityTable::new(functionality.iter().map(FunctionalityRow::to_record).collect())?;
    let ctable = ContributionTable::new(contributions.iter().map(|r| r.to_record()).collect())?;
    write(&dir, FUNCTIONALITY_CSV, &to_csv_bytes(&ftable), &mut artifacts)?;
    write(&dir, CONTRIBUTION_CSV, &to_csv_bytes(&ctable), &mut artifacts)?;
    write(&dir, CONTRIBUTIONS_JSON, set.to_canonical_json().as_bytes(), &mut artifacts)?;
    finish_report(&settings.out_dir, &dir, &doc, &mut artifacts)?;
    Ok(TeamOutcome {
        team: team.id.clone(),
        dir,
        artifacts,
        flagged: doc.is_flagged(),
    })
}

/// Writes report.md, report.json and, when the previous week's report
/// exists, delta.md.
fn finish_report(
    out_dir: &Path,
    dir: &Path,
    doc: &ReportDocument,
    artifacts: &mut BTreeMap<String, String>,
) -> Result<(), PipelineError> {
    write(dir, REPORT_MD, doc.to_markdown().as_bytes(), artifacts)?;
    let json = serde_json::to_string_pretty(doc).expect("report serializes");
    write(dir, REPORT_JSON, json.as_bytes(), artifacts)?;
    if let Some(prev) = previous_label(&doc.window.label) {
        let path = window_dir(out_dir, &doc.team, &prev).join(REPORT_JSON);
        if path.exists() {
            let earlier = load_report(&path)?;
            let digest = diff_windows(&earlier, doc).map_err(|e| PipelineError::BadArtifact {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let body = if digest.is_empty() {
                format!("# Changes for {}: {} to {}\n\nNo changes.\n", doc.team, prev, doc.window.label)
            } else {
                digest
            };
            write(dir, DELTA_MD, body.as_bytes(), artifacts)?;
        }
    }
    Ok(())
}

pub fn load_report(path: &Path) -> Result<ReportDocument, PipelineError> {
    let raw = std::fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&raw).map_err(|e| PipelineError::BadArtifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Rewrites report.md and delta.md from a stored report.json.
pub fn rerender(out_dir: &Path, team: &str, label: &str) -> Result<TeamOutcome, PipelineError> {
    let dir = window_dir(out_dir, team, label);
    let doc = load_report(&dir.join(REPORT_JSON))?;
    let mut artifacts = BTreeMap::new();
    finish_report(out_dir, &dir, &doc, &mut artifacts)?;
    Ok(TeamOutcome {
        team: team.to_string(),
        dir,
        artifacts,
        flagged: doc.is_flagged(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn previous_week_label() {
        assert_eq!(previous_label("week-3").as_deref(), Some("week-2"));
        assert_eq!(previous_label("week-1"), None);
        assert_eq!(previous_label("sprint-a"), None);
    }
}
