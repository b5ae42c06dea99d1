//! Line ownership of a snapshot and per-student contribution evidence.
//!
//! Ownership is last-writer-wins: the history reachable from the snapshot
//! commit is replayed parents-first, and every line carries the commit that
//! introduced it. A line survives an edit when a diff against the previous
//! version (trailing whitespace ignored) matches it. Renames are followed when
//! the new file keeps at least half of the old one's lines. Merge commits are
//! transparent: a merged file inherits ownership from whichever parent held
//! each line, and only lines first seen in the merge itself (conflict
//! resolutions) are credited to the merge.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use globset::{Glob, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};

use crate::diff;
use crate::git::{RawCommit, TreeEntry};
use crate::identity::{parse_coauthors, Resolution, Roster, StudentId};
use crate::ingest::{AnalysisWindow, HistoryReader, IngestError, RepoHandle, TreeDiff};
use crate::metrics::{self, FileKind};

#[derive(Debug, thiserror::Error)]
pub enum AttributionError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("invalid exclude glob {glob:?}: {message}")]
    BadGlob { glob: String, message: String },
}

impl AttributionError {
    pub fn is_unknown_commit(&self) -> bool {
        matches!(self, AttributionError::Ingest(IngestError::UnknownCommit(_)))
    }
}

/// Lockfiles, vendored dependencies, build output and caches.
pub const DEFAULT_EXCLUDES: &[&str] = &[
    "**/package-lock.json",
    "**/yarn.lock",
    "**/pnpm-lock.yaml",
    "**/poetry.lock",
    "**/Pipfile.lock",
    "**/uv.lock",
    "**/Cargo.lock",
    "**/Gemfile.lock",
    "**/composer.lock",
    "**/node_modules/**",
    "**/bower_components/**",
    "**/vendor/**",
    "**/venv/**",
    "**/.venv/**",
    "**/site-packages/**",
    "**/build/**",
    "**/dist/**",
    "**/target/**",
    "**/__pycache__/**",
    "**/.ipynb_checkpoints/**",
    "**/*.min.js",
    "**/*.min.css",
    "**/*.pyc",
];

pub const DEFAULT_MAX_FILE_BYTES: u64 = 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionOptions {
    /// Split a co-authored commit's line credit equally between its author
    /// and every resolved co-author.
    pub coauthor_split: bool,
    pub excludes: Vec<String>,
    /// Files above this size are skipped entirely.
    pub max_file_bytes: Option<u64>,
    /// Attribute only the `source` arrays of notebooks, not their outputs.
    pub notebook_sources_only: bool,
}

impl Default for AttributionOptions {
    fn default() -> Self {
        Self {
            coauthor_split: true,
            excludes: DEFAULT_EXCLUDES.iter().map(|s| s.to_string()).collect(),
            max_file_bytes: Some(DEFAULT_MAX_FILE_BYTES),
            notebook_sources_only: true,
        }
    }
}

impl AttributionOptions {
    pub fn exclude_set(&self) -> Result<GlobSet, AttributionError> {
        let mut builder = GlobSetBuilder::new();
        for glob in &self.excludes {
            let g = Glob::new(glob).map_err(|e| AttributionError::BadGlob {
                glob: glob.clone(),
                message: e.to_string(),
            })?;
            builder.add(g);
        }
        builder.build().map_err(|e| AttributionError::BadGlob {
            glob: self.excludes.join(","),
            message: e.to_string(),
        })
    }
}

/// One line of a snapshot file with the commit that last wrote it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineAttribution {
    pub path: String,
    pub line_no: usize,
    pub content: String,
    pub student: Resolution,
    /// Resolved co-authors named in the commit's trailers.
    pub co_authors: Vec<StudentId>,
    pub commit: String,
    pub authored_at: DateTime<Utc>,
}

impl LineAttribution {
    /// Students sharing credit for this line, each with an equal share.
    pub fn credited(&self, split: bool) -> Vec<StudentId> {
        let mut who = vec![self.student.or_unmapped()];
        if split {
            for c in &self.co_authors {
                if !who.contains(c) {
                    who.push(c.clone());
                }
            }
        }
        who
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoloFunction {
    pub name: String,
    pub score: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionEvidence {
    pub student: StudentId,
    pub path: String,
    pub lines_owned: f64,
    pub lines_added_in_window: f64,
    /// Owned lines that are neither blank nor comments.
    pub code_lines_owned: f64,
    pub commit_messages: Vec<String>,
    pub solo_functions: Vec<SoloFunction>,
}

impl ContributionEvidence {
    fn new(student: StudentId, path: &str) -> Self {
        Self {
            student,
            path: path.to_string(),
            lines_owned: 0.0,
            lines_added_in_window: 0.0,
            code_lines_owned: 0.0,
            commit_messages: Vec::new(),
            solo_functions: Vec::new(),
        }
    }

    pub fn has_lines(&self) -> bool {
        self.lines_owned + self.lines_added_in_window > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionSet {
    pub window: AnalysisWindow,
    /// Commit whose tree is attributed; `None` when the branch has no commit
    /// before the window end.
    pub snapshot_commit: Option<String>,
    /// Evidence keyed by student id, each list ordered by path. The
    /// `unmapped` key collects authors missing from the roster.
    pub per_student: BTreeMap<String, Vec<ContributionEvidence>>,
    pub zero_commit_students: Vec<StudentId>,
    /// Roster students with window commits or co-author credit.
    pub active_students: Vec<StudentId>,
    /// `Name <email>` of window authors not found in the roster.
    pub unmapped_authors: Vec<String>,
    /// Attributed line count per snapshot file.
    pub file_line_counts: BTreeMap<String, u64>,
}

impl ContributionSet {
    pub fn evidence(&self, student_id: &str) -> &[ContributionEvidence] {
        self.per_student.get(student_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn evidence_for(&self, student_id: &str, path: &str) -> Option<&ContributionEvidence> {
        self.evidence(student_id).iter().find(|e| e.path == path)
    }

    pub fn is_zero_commit(&self, student_id: &str) -> bool {
        self.zero_commit_students.iter().any(|s| s.id == student_id)
    }

    /// Stable, pretty-printed JSON.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("contribution set serializes")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineChurn {
    pub added: u64,
    pub deleted: u64,
}

// ---------------------------------------------------------------------------
// blame engine

/// Per-line origin commit indices for every tracked file of one commit.
#[derive(Clone)]
struct FileState {
    oid: String,
    origins: Arc<Vec<u32>>,
}

type TreeState = HashMap<String, FileState>;

/// Result of replaying history up to one commit.
pub(crate) struct BlameResult {
    commits: Vec<Arc<RawCommit>>,
    files: BTreeMap<String, (Arc<Vec<String>>, Arc<Vec<u32>>)>,
}

impl BlameResult {
    fn commit(&self, origin: u32) -> &RawCommit {
        &self.commits[origin as usize]
    }
}

struct BlameEngine<'a> {
    reader: &'a mut HistoryReader,
    max_file_bytes: Option<u64>,
}

impl BlameEngine<'_> {
    fn run(&mut self, at: &str) -> Result<BlameResult, IngestError> {
        let at = self.reader.resolve(at)?;
        let history = self.reader.topo_history(&at)?;
        let index: HashMap<&str, u32> = history
            .iter()
            .enumerate()
            .map(|(i, (h, _))| (h.as_str(), i as u32))
            .collect();
        let mut remaining_children: HashMap<&str, usize> = HashMap::new();
        for (_, parents) in &history {
            for p in parents {
                *remaining_children.entry(p.as_str()).or_default() += 1;
            }
        }

        let mut commits = Vec::with_capacity(history.len());
        let mut states: HashMap<&str, Arc<TreeState>> = HashMap::new();
        for (ci, (hash, parents)) in history.iter().enumerate() {
            commits.push(self.reader.commit(hash)?);
            let tree = self.reader.tree(hash)?;
            let parent_inputs = parents
                .iter()
                .map(|p| {
                    let state = states.get(p.as_str()).cloned().unwrap_or_default();
                    Ok((state, self.reader.tree(p)?))
                })
                .collect::<Result<Vec<_>, IngestError>>()?;
            let state = self.replay_commit(ci as u32, &tree, &parent_inputs)?;
            states.insert(hash.as_str(), Arc::new(state));
            for p in parents {
                let left = remaining_children.get_mut(p.as_str()).expect("counted parent");
                *left -= 1;
                if *left == 0 && index.contains_key(p.as_str()) {
                    states.remove(p.as_str());
                }
            }
        }

        let final_state = states.remove(at.as_str()).unwrap_or_default();
        let mut files = BTreeMap::new();
        for (path, fs) in final_state.iter() {
            let lines = self.reader.text(&fs.oid)?.unwrap_or_default();
            files.insert(path.clone(), (lines, fs.origins.clone()));
        }
        Ok(BlameResult { commits, files })
    }

    fn trackable(&mut self, entry: &TreeEntry) -> Result<Option<Arc<Vec<String>>>, IngestError> {
        if self.max_file_bytes.is_some_and(|max| entry.size > max) {
            return Ok(None);
        }
        self.reader.text(&entry.oid)
    }

    fn replay_commit(
        &mut self,
        ci: u32,
        tree: &[TreeEntry],
        parents: &[(Arc<TreeState>, Arc<Vec<TreeEntry>>)],
    ) -> Result<TreeState, IngestError> {
        // Rename sources per parent: new path -> old path.
        let mut renames: Vec<HashMap<String, String>> = Vec::with_capacity(parents.len());
        for (_, ptree) in parents {
            let d = TreeDiff::between(ptree, tree);
            let pairs = self.reader.pair_renames(&d.deleted, &d.added)?;
            renames.push(
                pairs
                    .into_iter()
                    .map(|(di, ai)| (d.added[ai].path.clone(), d.deleted[di].path.clone()))
                    .collect(),
            );
        }
        let parent_oids: Vec<HashMap<&str, &str>> = parents
            .iter()
            .map(|(_, t)| t.iter().map(|e| (e.path.as_str(), e.oid.as_str())).collect())
            .collect();

        let mut state = TreeState::new();
        'entries: for entry in tree {
            // Unchanged relative to some parent: inherit as-is.
            for (pi, (pstate, _)) in parents.iter().enumerate() {
                if parent_oids[pi].get(entry.path.as_str()) == Some(&entry.oid.as_str()) {
                    if let Some(fs) = pstate.get(&entry.path) {
                        state.insert(entry.path.clone(), fs.clone());
                    }
                    continue 'entries;
                }
            }
            let Some(lines) = self.trackable(entry)? else { continue };
            let mut origins: Vec<Option<u32>> = vec![None; lines.len()];
            for (pi, (pstate, _)) in parents.iter().enumerate() {
                let source = pstate
                    .get(&entry.path)
                    .or_else(|| renames[pi].get(&entry.path).and_then(|from| pstate.get(from)));
                let Some(source) = source else { continue };
                let Some(src_lines) = self.reader.text(&source.oid)? else { continue };
                for (n, m) in diff::match_lines(&src_lines, &lines).into_iter().enumerate() {
                    if origins[n].is_none() {
                        origins[n] = m.map(|o| source.origins[o]);
                    }
                }
            }
            state.insert(
                entry.path.clone(),
                FileState {
                    oid: entry.oid.clone(),
                    origins: Arc::new(origins.into_iter().map(|o| o.unwrap_or(ci)).collect()),
                },
            );
        }
        Ok(state)
    }
}

/// Lines inside notebook `"source"` arrays; everything else is output or metadata.
fn notebook_source_mask(lines: &[String]) -> Vec<bool> {
    let mut mask = vec![false; lines.len()];
    let mut in_source = false;
    let mut found = false;
    for (i, line) in lines.iter().enumerate() {
        let t = line.trim();
        if in_source {
            if t.starts_with(']') {
                in_source = false;
            } else {
                mask[i] = true;
            }
            continue;
        }
        if let Some(rest) = t.strip_prefix("\"source\":") {
            found = true;
            let rest = rest.trim();
            if rest.starts_with('[') && !rest.ends_with(']') && !rest.ends_with("],") {
                in_source = true;
            } else if rest != "[]" && rest != "[]," {
                mask[i] = true;
            }
        }
    }
    if !found {
        return vec![true; lines.len()];
    }
    mask
}

fn is_notebook(path: &str) -> bool {
    path.to_ascii_lowercase().ends_with(".ipynb")
}

fn attributions_from(
    blame: &BlameResult,
    roster: &Roster,
    excludes: &GlobSet,
    options: &AttributionOptions,
) -> Vec<LineAttribution> {
    let mut out = Vec::new();
    let mut resolved: HashMap<u32, (Resolution, Vec<StudentId>)> = HashMap::new();
    for (path, (lines, origins)) in &blame.files {
        if excludes.is_match(path) {
            continue;
        }
        let mask = if options.notebook_sources_only && is_notebook(path) {
            notebook_source_mask(lines)
        } else {
            vec![true; lines.len()]
        };
        for (i, (content, &origin)) in lines.iter().zip(origins.iter()).enumerate() {
            if !mask[i] {
                continue;
            }
            let commit = blame.commit(origin);
            let (student, co_authors) = resolved
                .entry(origin)
                .or_insert_with(|| resolve_commit(roster, commit))
                .clone();
            out.push(LineAttribution {
                path: path.clone(),
                line_no: i + 1,
                content: content.clone(),
                student,
                co_authors,
                commit: commit.hash.clone(),
                authored_at: commit.authored_at,
            });
        }
    }
    out
}

fn resolve_commit(roster: &Roster, commit: &RawCommit) -> (Resolution, Vec<StudentId>) {
    let author = roster.resolve(&commit.author_name, &commit.author_email);
    let mut co = Vec::new();
    for tag in parse_coauthors(&commit.message) {
        if let Resolution::Student(s) = roster.resolve(&tag.name, &tag.email) {
            if author.student() != Some(&s) && !co.contains(&s) {
                co.push(s);
            }
        }
    }
    (author, co)
}

/// Line ownership of every non-excluded text file at `at`.
pub fn blame_snapshot(
    repo: &RepoHandle,
    at: &str,
    roster: &Roster,
    options: &AttributionOptions,
) -> Result<Vec<LineAttribution>, AttributionError> {
    let excludes = options.exclude_set()?;
    let mut reader = HistoryReader::new(repo)?;
    let blame = BlameEngine {
        reader: &mut reader,
        max_file_bytes: options.max_file_bytes,
    }
    .run(at)?;
    Ok(attributions_from(&blame, roster, &excludes, options))
}

pub fn build_contribution_set(
    repo: &RepoHandle,
    window: &AnalysisWindow,
    roster: &Roster,
    options: &AttributionOptions,
) -> Result<ContributionSet, AttributionError> {
    let excludes = options.exclude_set()?;
    let mut reader = HistoryReader::new(repo)?;
    let snapshot_commit = reader.first_parent_before(repo.head_ref(), window.end)?;

    let (lines, commits) = match &snapshot_commit {
        Some(at) => {
            let blame = BlameEngine {
                reader: &mut reader,
                max_file_bytes: options.max_file_bytes,
            }
            .run(at)?;
            let lines = attributions_from(&blame, roster, &excludes, options);
            (lines, reader.commits_in_window(at, window)?)
        }
        None => (Vec::new(), Vec::new()),
    };

    let mut evidence: BTreeMap<(String, String), ContributionEvidence> = BTreeMap::new();
    let mut file_line_counts: BTreeMap<String, u64> = BTreeMap::new();
    let ensure = |evidence: &mut BTreeMap<(String, String), ContributionEvidence>, s: &StudentId, path: &str| {
        evidence
            .entry((s.id.clone(), path.to_string()))
            .or_insert_with(|| ContributionEvidence::new(s.clone(), path));
    };

    for line in &lines {
        *file_line_counts.entry(line.path.clone()).or_default() += 1;
        let credited = line.credited(options.coauthor_split);
        let share = 1.0 / credited.len() as f64;
        let is_code = !line.content.trim().is_empty() && !metrics::is_comment_line(&line.path, &line.content);
        for s in &credited {
            ensure(&mut evidence, s, &line.path);
            let e = evidence.get_mut(&(s.id.clone(), line.path.clone())).expect("ensured");
            e.lines_owned += share;
            if window.contains(line.authored_at) {
                e.lines_added_in_window += share;
            }
            if is_code {
                e.code_lines_owned += share;
            }
        }
    }

    let mut active: BTreeSet<String> = BTreeSet::new();
    let mut unmapped_authors: BTreeSet<String> = BTreeSet::new();
    for commit in &commits {
        let author = roster.resolve(&commit.author_name, &commit.author_email);
        if author == Resolution::Unknown {
            unmapped_authors.insert(format!("{} <{}>", commit.author_name, commit.author_email));
        }
        let mut credited = vec![author.or_unmapped()];
        if options.coauthor_split {
            for tag in parse_coauthors(&commit.message) {
                if let Resolution::Student(s) = roster.resolve(&tag.name, &tag.email) {
                    if !credited.contains(&s) {
                        credited.push(s);
                    }
                }
            }
        }
        for s in &credited {
            active.insert(s.id.clone());
            for change in &commit.changed_files {
                if excludes.is_match(&change.path) {
                    continue;
                }
                ensure(&mut evidence, s, &change.path);
                let e = evidence.get_mut(&(s.id.clone(), change.path.clone())).expect("ensured");
                let message = commit.message.trim_end().to_string();
                if !e.commit_messages.contains(&message) {
                    e.commit_messages.push(message);
                }
            }
        }
    }

    assign_solo_functions(&lines, options.coauthor_split, &mut evidence);

    let mut per_student: BTreeMap<String, Vec<ContributionEvidence>> = BTreeMap::new();
    for ((id, _), e) in evidence {
        per_student.entry(id).or_default().push(e);
    }
    let (active_students, zero_commit_students): (Vec<StudentId>, Vec<StudentId>) =
        roster.students().cloned().partition(|s| active.contains(&s.id));

    Ok(ContributionSet {
        window: window.clone(),
        snapshot_commit,
        per_student,
        zero_commit_students,
        active_students,
        unmapped_authors: unmapped_authors.into_iter().collect(),
        file_line_counts,
    })
}

/// A function is solo when every line directly inside it (nested functions
/// excluded) is credited to the same single student.
fn assign_solo_functions(
    lines: &[LineAttribution],
    split: bool,
    evidence: &mut BTreeMap<(String, String), ContributionEvidence>,
) {
    let mut by_file: BTreeMap<&str, Vec<&LineAttribution>> = BTreeMap::new();
    for l in lines {
        by_file.entry(l.path.as_str()).or_default().push(l);
    }
    for (path, file_lines) in by_file {
        if metrics::classify_file(path, b"") != FileKind::Script {
            continue;
        }
        let source: String = file_lines.iter().map(|l| format!("{}\n", l.content)).collect();
        let report = metrics::cyclomatic(&source);
        let spans: Vec<metrics::FunctionSpan> = report
            .functions
            .iter()
            .map(|f| metrics::FunctionSpan {
                name: f.name.clone(),
                span: f.span.clone(),
            })
            .collect();
        let mut owners: Vec<Option<Option<StudentId>>> = vec![None; spans.len()];
        for l in &file_lines {
            let Some(fi) = metrics::innermost_span(&spans, l.line_no) else { continue };
            let credited = l.credited(split);
            let single = (credited.len() == 1).then(|| credited[0].clone());
            owners[fi] = match owners[fi].take() {
                None => Some(single),
                Some(prev) if prev == single => Some(prev),
                Some(_) => Some(None),
            };
        }
        for (fi, owner) in owners.into_iter().enumerate() {
            if let Some(Some(student)) = owner {
                if student.is_unmapped() {
                    continue;
                }
                if let Some(e) = evidence.get_mut(&(student.id.clone(), path.to_string())) {
                    e.solo_functions.push(SoloFunction {
                        name: report.functions[fi].name.clone(),
                        score: report.functions[fi].score,
                    });
                }
            }
        }
    }
}

/// Lines added and deleted per student over non-merge window commits of the
/// default branch; author credit only. Every roster student is present.
pub fn churn_stats(
    repo: &RepoHandle,
    window: &AnalysisWindow,
    roster: &Roster,
) -> Result<BTreeMap<StudentId, LineChurn>, AttributionError> {
    churn_stats_with(repo, window, roster, &AttributionOptions::default())
}

pub fn churn_stats_with(
    repo: &RepoHandle,
    window: &AnalysisWindow,
    roster: &Roster,
    options: &AttributionOptions,
) -> Result<BTreeMap<StudentId, LineChurn>, AttributionError> {
    let excludes = options.exclude_set()?;
    let mut reader = HistoryReader::new(repo)?;
    let mut out: BTreeMap<StudentId, LineChurn> = roster.students().map(|s| (s.clone(), LineChurn::default())).collect();
    for commit in reader.commits_in_window(repo.head_ref(), window)? {
        let who = roster.resolve(&commit.author_name, &commit.author_email).or_unmapped();
        let tree = reader.tree(&commit.hash)?;
        let ptree = match commit.parents.first() {
            Some(p) => reader.tree(p)?,
            None => Arc::new(Vec::new()),
        };
        let d = TreeDiff::between(&ptree, &tree);
        let pairs = reader.pair_renames(&d.deleted, &d.added)?;
        let renamed_from: HashSet<usize> = pairs.iter().map(|p| p.0).collect();
        let renamed_to: HashMap<usize, usize> = pairs.iter().map(|p| (p.1, p.0)).collect();

        let mut delta = LineChurn::default();
        let mut add = |old: Option<&[String]>, new: Option<&[String]>| {
            let (a, del) = diff::line_churn(old.unwrap_or(&[]), new.unwrap_or(&[]));
            delta.added += a;
            delta.deleted += del;
        };
        let within = |e: &TreeEntry| !excludes.is_match(&e.path) && options.max_file_bytes.is_none_or(|m| e.size <= m);
        for (old, new) in &d.modified {
            if !within(new) {
                continue;
            }
            if let (Some(o), Some(n)) = (reader.text(&old.oid)?, reader.text(&new.oid)?) {
                add(Some(&o), Some(&n));
            }
        }
        for (ai, new) in d.added.iter().enumerate() {
            if !within(new) {
                continue;
            }
            let Some(n) = reader.text(&new.oid)? else { continue };
            match renamed_to.get(&ai) {
                Some(&di) => {
                    let o = reader.text(&d.deleted[di].oid)?;
                    add(Some(o.as_deref().map_or(&[][..], |v| v.as_slice())), Some(&n));
                }
                None => add(None, Some(&n)),
            }
        }
        for (di, old) in d.deleted.iter().enumerate() {
            if renamed_from.contains(&di) || !within(old) {
                continue;
            }
            if let Some(o) = reader.text(&old.oid)? {
                add(Some(&o), None);
            }
        }
        let entry = out.entry(who).or_default();
        entry.added += delta.added;
        entry.deleted += delta.deleted;
    }
    Ok(out)
}

/// Lines of an unmerged branch that do not exist on the default branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSupplement {
    pub branch: String,
    pub tip: String,
    /// `(student id, path) -> lines` for lines written by commits the
    /// default branch cannot reach.
    pub entries: Vec<SupplementEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupplementEntry {
    pub student: StudentId,
    pub path: String,
    pub lines: u64,
}

pub fn branch_supplement(
    repo: &RepoHandle,
    branch: &str,
    roster: &Roster,
    options: &AttributionOptions,
) -> Result<BranchSupplement, AttributionError> {
    let tip = repo.branch_tip(branch)?;
    let excludes = options.exclude_set()?;
    let mut reader = HistoryReader::new(repo)?;
    let mainline = reader.reachable(repo.head_ref())?;
    let blame = BlameEngine {
        reader: &mut reader,
        max_file_bytes: options.max_file_bytes,
    }
    .run(&tip)?;
    let mut counts: BTreeMap<(StudentId, String), u64> = BTreeMap::new();
    for line in attributions_from(&blame, roster, &excludes, options) {
        if mainline.contains(&line.commit) {
            continue;
        }
        *counts.entry((line.student.or_unmapped(), line.path)).or_default() += 1;
    }
    Ok(BranchSupplement {
        branch: branch.to_string(),
        tip,
        entries: counts
            .into_iter()
            .map(|((student, path), lines)| SupplementEntry { student, path, lines })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(lines: &[&str]) -> Vec<String> {
        lines.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn notebook_mask_keeps_sources_only() {
        let nb = v(&[
            "{",
            " \"cells\": [",
            "  {",
            "   \"cell_type\": \"code\",",
            "   \"outputs\": [",
            "    {\"text\": \"42\"}",
            "   ],",
            "   \"source\": [",
            "    \"x = 1\\n\",",
            "    \"print(x)\"",
            "   ]",
            "  },",
            "  {\"cell_type\": \"markdown\", \"source\": []},",
            "  {",
            "   \"source\": \"y = 2\"",
            "  }",
            " ]",
            "}",
        ]);
        let mask = notebook_source_mask(&nb);
        let kept: Vec<usize> = mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect();
        assert_eq!(kept, vec![8, 9, 14]);
        assert_eq!(notebook_source_mask(&v(&["{\"cells\": []}"])), vec![true]);
    }

    #[test]
    fn default_excludes_cover_generated_paths() {
        let set = AttributionOptions::default().exclude_set().unwrap();
        for p in [
            "package-lock.json",
            "web/package-lock.json",
            "node_modules/left-pad/index.js",
            "build/app.js",
            "src/__pycache__/x.pyc",
            "static/jquery.min.js",
        ] {
            assert!(set.is_match(p), "{p} should be excluded");
        }
        for p in ["app.py", "src/build_report.py", "templates/index.html"] {
            assert!(!set.is_match(p), "{p} should be kept");
        }
    }

    #[test]
    fn bad_glob_is_reported() {
        let opts = AttributionOptions {
            excludes: vec!["[".into()],
            ..Default::default()
        };
        assert!(matches!(opts.exclude_set(), Err(AttributionError::BadGlob { .. })));
    }
}
