//! Read-only access to local clones: branch resolution, commit history and
//! file snapshots.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::diff::{self, RenameCandidate};
use crate::git::{self, Git, GitError, ObjectReader, RawCommit, TreeEntry};
use crate::metrics::looks_binary;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{0} is not a git repository")]
    NotARepository(PathBuf),
    #[error("branch {0:?} not found")]
    BranchNotFound(String),
    #[error("unknown commit {0}")]
    UnknownCommit(String),
    #[error("invalid analysis window: {0}")]
    InvalidWindow(String),
    #[error(transparent)]
    Git(#[from] GitError),
}

/// An opened repository pinned to the head of its default branch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoHandle {
    root_path: PathBuf,
    default_branch: String,
    head_ref: String,
}

impl RepoHandle {
    pub fn root_path(&self) -> &Path {
        &self.root_path
    }

    pub fn default_branch(&self) -> &str {
        &self.default_branch
    }

    pub fn head_ref(&self) -> &str {
        &self.head_ref
    }

    pub(crate) fn git(&self) -> Git {
        Git::new(&self.root_path)
    }

    /// Resolves a local or `origin/` remote-tracking branch to its tip.
    pub fn branch_tip(&self, name: &str) -> Result<String, IngestError> {
        resolve_branch(&self.git(), name)?.ok_or_else(|| IngestError::BranchNotFound(name.to_string()))
    }

    /// Local and `origin/` branches other than the default, with the number of
    /// their commits not reachable from the default branch head.
    pub fn unmerged_branches(&self) -> Result<Vec<(String, usize)>, IngestError> {
        let git = self.git();
        let listing = git.run_text(&[
            "for-each-ref",
            "--format=%(refname)",
            "refs/heads",
            "refs/remotes/origin",
        ])?;
        let mut names: Vec<String> = listing
            .lines()
            .filter_map(|r| {
                r.strip_prefix("refs/heads/")
                    .or_else(|| r.strip_prefix("refs/remotes/origin/"))
                    .map(str::to_owned)
            })
            .filter(|n| n != "HEAD" && *n != self.default_branch)
            .collect();
        names.sort();
        names.dedup();
        let mut out = Vec::new();
        for name in names {
            let tip = self.branch_tip(&name)?;
            let range = format!("{}..{}", self.head_ref, tip);
            let count: usize = git
                .run_text(&["rev-list", "--count", &range])?
                .trim()
                .parse()
                .map_err(|_| GitError::Parse("rev-list --count".into()))?;
            if count > 0 {
                out.push((name, count));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChangeKind {
    Add,
    Modify,
    Delete,
    Rename { from: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileChange {
    pub path: String,
    #[serde(flatten)]
    pub kind: ChangeKind,
}

impl FileChange {
    /// True when this change touches `path` on either side of a rename.
    pub fn touches(&self, path: &str) -> bool {
        self.path == path || matches!(&self.kind, ChangeKind::Rename { from } if from == path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub hash: String,
    pub author_name: String,
    pub author_email: String,
    pub authored_at: DateTime<Utc>,
    pub message: String,
    pub parents: Vec<String>,
    pub is_merge: bool,
    pub changed_files: Vec<FileChange>,
}

/// Half-open `[start, end)` interval of author dates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub label: String,
}

impl AnalysisWindow {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>, label: impl Into<String>) -> Result<Self, IngestError> {
        if start >= end {
            return Err(IngestError::InvalidWindow(format!("start {start} is not before end {end}")));
        }
        Ok(Self {
            start,
            end,
            label: label.into(),
        })
    }

    /// Week `n` (1-based) of a sprint starting at midnight UTC on `sprint_start`.
    pub fn week(sprint_start: NaiveDate, n: u32) -> Result<Self, IngestError> {
        if n == 0 {
            return Err(IngestError::InvalidWindow("weeks are numbered from 1".into()));
        }
        let origin = sprint_start
            .and_hms_opt(0, 0, 0)
            .expect("midnight is valid")
            .and_utc();
        let start = origin + Duration::weeks(i64::from(n) - 1);
        Self::new(start, start + Duration::weeks(1), format!("week-{n}"))
    }

    pub fn contains(&self, at: DateTime<Utc>) -> bool {
        self.start <= at && at < self.end
    }
}

pub fn open_repo(path: &Path, branch: Option<&str>) -> Result<RepoHandle, IngestError> {
    let not_repo = || IngestError::NotARepository(path.to_path_buf());
    if !path.is_dir() {
        return Err(not_repo());
    }
    let root = path.canonicalize().map_err(|_| not_repo())?;
    if !(git::is_git_dir(&root) || root.join(".git").exists()) {
        return Err(not_repo());
    }
    let git = Git::new(&root);
    if git.probe(&["rev-parse", "--git-dir"])?.is_none() {
        return Err(not_repo());
    }

    let (default_branch, head_ref) = match branch {
        Some(name) => {
            let tip = resolve_branch(&git, name)?.ok_or_else(|| IngestError::BranchNotFound(name.to_string()))?;
            (name.to_string(), tip)
        }
        None => configured_default(&git)?,
    };
    Ok(RepoHandle {
        root_path: root,
        default_branch,
        head_ref,
    })
}

fn resolve_branch(git: &Git, name: &str) -> Result<Option<String>, GitError> {
    for candidate in [format!("refs/heads/{name}"), format!("refs/remotes/origin/{name}")] {
        if let Some(tip) = git.resolve_commit(&candidate)? {
            return Ok(Some(tip));
        }
    }
    Ok(None)
}

/// origin/HEAD, then the checked-out branch, then `main`, then `master`.
fn configured_default(git: &Git) -> Result<(String, String), IngestError> {
    let mut candidates = Vec::new();
    if let Some(r) = git.probe(&["symbolic-ref", "--quiet", "refs/remotes/origin/HEAD"])? {
        if let Some(name) = r.strip_prefix("refs/remotes/origin/") {
            candidates.push(name.to_string());
        }
    }
    if let Some(r) = git.probe(&["symbolic-ref", "--quiet", "HEAD"])? {
        if let Some(name) = r.strip_prefix("refs/heads/") {
            candidates.push(name.to_string());
        }
    }
    candidates.push("main".into());
    candidates.push("master".into());
    for name in candidates {
        if let Some(tip) = resolve_branch(git, &name)? {
            return Ok((name, tip));
        }
    }
    Err(IngestError::BranchNotFound("main".into()))
}

/// All non-merge commits reachable from the default branch head whose author
/// date falls in `window`, ordered by `(authored_at, hash)`.
pub fn list_commits(repo: &RepoHandle, window: &AnalysisWindow) -> Result<Vec<CommitRecord>, IngestError> {
    let mut reader = HistoryReader::new(repo)?;
    reader.commits_in_window(repo.head_ref(), window)
}

/// Full file tree at `at`, ordered bytewise by path.
pub fn snapshot(repo: &RepoHandle, at: &str) -> Result<Vec<(String, Vec<u8>)>, IngestError> {
    let mut reader = HistoryReader::new(repo)?;
    let commit = reader.resolve(at)?;
    let tree = reader.tree(&commit)?;
    let mut files = Vec::with_capacity(tree.len());
    for entry in tree.iter() {
        let data = reader.objects.blob(&entry.oid)?;
        files.push((entry.path.clone(), data.as_ref().clone()));
    }
    Ok(files)
}

/// Caching object access shared by the history-walking operations.
pub(crate) struct HistoryReader {
    git: Git,
    objects: ObjectReader,
    commits: HashMap<String, Arc<RawCommit>>,
    trees: HashMap<String, Arc<Vec<TreeEntry>>>,
    texts: HashMap<String, Option<Arc<Vec<String>>>>,
}

impl HistoryReader {
    pub fn new(repo: &RepoHandle) -> Result<Self, IngestError> {
        let git = repo.git();
        let objects = git.object_reader()?;
        Ok(Self {
            git,
            objects,
            commits: HashMap::new(),
            trees: HashMap::new(),
            texts: HashMap::new(),
        })
    }

    pub fn resolve(&mut self, rev: &str) -> Result<String, IngestError> {
        self.git
            .resolve_commit(rev)?
            .ok_or_else(|| IngestError::UnknownCommit(rev.to_string()))
    }

    pub fn commit(&mut self, hash: &str) -> Result<Arc<RawCommit>, IngestError> {
        if let Some(c) = self.commits.get(hash) {
            return Ok(c.clone());
        }
        let raw = match self.objects.commit(hash) {
            Ok(c) => Arc::new(c),
            Err(GitError::Missing(_)) => return Err(IngestError::UnknownCommit(hash.to_string())),
            Err(e) => return Err(e.into()),
        };
        self.commits.insert(hash.to_string(), raw.clone());
        Ok(raw)
    }

    /// Blob entries of a commit's tree, cached by tree id.
    pub fn tree(&mut self, commit: &str) -> Result<Arc<Vec<TreeEntry>>, IngestError> {
        let tree_id = self.commit(commit)?.tree.clone();
        if let Some(t) = self.trees.get(&tree_id) {
            return Ok(t.clone());
        }
        let tree = Arc::new(self.git.ls_tree(&tree_id)?);
        self.trees.insert(tree_id, tree.clone());
        Ok(tree)
    }

    /// Lines of a text blob; `None` when the blob is binary.
    pub fn text(&mut self, oid: &str) -> Result<Option<Arc<Vec<String>>>, IngestError> {
        if let Some(t) = self.texts.get(oid) {
            return Ok(t.clone());
        }
        let data = self.objects.blob(oid)?;
        let text = if looks_binary(&data) {
            None
        } else {
            Some(Arc::new(diff::split_lines(&data)))
        };
        self.texts.insert(oid.to_string(), text.clone());
        Ok(text)
    }

    /// Every commit reachable from `tip`, parents before children, with parents.
    pub fn topo_history(&mut self, tip: &str) -> Result<Vec<(String, Vec<String>)>, IngestError> {
        let out = self
            .git
            .run_text(&["rev-list", "--topo-order", "--reverse", "--parents", tip])?;
        Ok(out
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| {
                let mut ids = l.split(' ').map(str::to_owned);
                let hash = ids.next().unwrap_or_default();
                (hash, ids.collect())
            })
            .collect())
    }

    pub fn reachable(&mut self, tip: &str) -> Result<HashSet<String>, IngestError> {
        let out = self.git.run_text(&["rev-list", tip])?;
        Ok(out.lines().map(str::to_owned).collect())
    }

    /// Latest commit on the first-parent chain of `tip` authored before `end`.
    pub fn first_parent_before(&mut self, tip: &str, end: DateTime<Utc>) -> Result<Option<String>, IngestError> {
        let mut cursor = Some(tip.to_string());
        while let Some(hash) = cursor {
            let c = self.commit(&hash)?;
            if c.authored_at < end {
                return Ok(Some(hash));
            }
            cursor = c.parents.first().cloned();
        }
        Ok(None)
    }

    pub fn commits_in_window(&mut self, tip: &str, window: &AnalysisWindow) -> Result<Vec<CommitRecord>, IngestError> {
        let out = self.git.run_text(&["rev-list", "--no-merges", tip])?;
        let mut records = Vec::new();
        for hash in out.lines().filter(|l| !l.is_empty()) {
            let raw = self.commit(hash)?;
            if !window.contains(raw.authored_at) {
                continue;
            }
            let changed_files = self.changed_files(&raw)?;
            records.push(CommitRecord {
                hash: raw.hash.clone(),
                author_name: raw.author_name.clone(),
                author_email: raw.author_email.clone(),
                authored_at: raw.authored_at,
                message: raw.message.clone(),
                parents: raw.parents.clone(),
                is_merge: raw.parents.len() >= 2,
                changed_files,
            });
        }
        records.sort_by(|a, b| a.authored_at.cmp(&b.authored_at).then_with(|| a.hash.cmp(&b.hash)));
        Ok(records)
    }

    /// Changes against the first parent, with similarity-based rename pairing.
    pub fn changed_files(&mut self, raw: &RawCommit) -> Result<Vec<FileChange>, IngestError> {
        let new_tree = self.tree(&raw.hash)?;
        let old_tree = match raw.parents.first() {
            Some(p) => self.tree(p)?,
            None => Arc::new(Vec::new()),
        };
        let tree_diff = TreeDiff::between(&old_tree, &new_tree);
        let mut changes: Vec<FileChange> = tree_diff
            .modified
            .iter()
            .map(|(_, new)| FileChange {
                path: new.path.clone(),
                kind: ChangeKind::Modify,
            })
            .collect();

        let pairs = self.pair_renames(&tree_diff.deleted, &tree_diff.added)?;
        let renamed_from: HashSet<usize> = pairs.iter().map(|p| p.0).collect();
        let renamed_to: HashMap<usize, usize> = pairs.iter().map(|p| (p.1, p.0)).collect();
        for (ai, entry) in tree_diff.added.iter().enumerate() {
            let kind = match renamed_to.get(&ai) {
                Some(&di) => ChangeKind::Rename {
                    from: tree_diff.deleted[di].path.clone(),
                },
                None => ChangeKind::Add,
            };
            changes.push(FileChange {
                path: entry.path.clone(),
                kind,
            });
        }
        for (di, entry) in tree_diff.deleted.iter().enumerate() {
            if !renamed_from.contains(&di) {
                changes.push(FileChange {
                    path: entry.path.clone(),
                    kind: ChangeKind::Delete,
                });
            }
        }
        changes.sort_by(|a, b| a.path.as_bytes().cmp(b.path.as_bytes()));
        Ok(changes)
    }

    pub fn pair_renames(&mut self, deleted: &[TreeEntry], added: &[TreeEntry]) -> Result<Vec<(usize, usize)>, IngestError> {
        if deleted.is_empty() || added.is_empty() {
            return Ok(Vec::new());
        }
        let del_text = deleted
            .iter()
            .map(|e| self.text(&e.oid))
            .collect::<Result<Vec<_>, _>>()?;
        let add_text = added
            .iter()
            .map(|e| self.text(&e.oid))
            .collect::<Result<Vec<_>, _>>()?;
        let candidates = |entries: &'_ [TreeEntry], texts: &'_ [Option<Arc<Vec<String>>>]| -> Vec<_> {
            entries
                .iter()
                .zip(texts)
                .map(|(e, t)| (e.path.clone(), e.oid.clone(), t.clone()))
                .collect()
        };
        let del = candidates(deleted, &del_text);
        let add = candidates(added, &add_text);
        let (del_refs, add_refs) = (rename_refs(&del), rename_refs(&add));
        Ok(diff::detect_renames(&del_refs, &add_refs))
    }
}

type Candidate = (String, String, Option<Arc<Vec<String>>>);

fn rename_refs(v: &[Candidate]) -> Vec<RenameCandidate<'_>> {
    v.iter()
        .map(|(p, o, t)| RenameCandidate {
            path: p,
            oid: o,
            lines: t.as_ref().map(|l| l.as_slice()),
        })
        .collect()
}

/// Path-level difference between two sorted trees.
pub(crate) struct TreeDiff {
    pub modified: Vec<(TreeEntry, TreeEntry)>,
    pub added: Vec<TreeEntry>,
    pub deleted: Vec<TreeEntry>,
}

impl TreeDiff {
    pub fn between(old: &[TreeEntry], new: &[TreeEntry]) -> Self {
        let old_by_path: HashMap<&str, &TreeEntry> = old.iter().map(|e| (e.path.as_str(), e)).collect();
        let new_paths: HashSet<&str> = new.iter().map(|e| e.path.as_str()).collect();
        let mut diff = TreeDiff {
            modified: Vec::new(),
            added: Vec::new(),
            deleted: Vec::new(),
        };
        for entry in new {
            match old_by_path.get(entry.path.as_str()) {
                Some(prev) if prev.oid != entry.oid => diff.modified.push(((*prev).clone(), entry.clone())),
                Some(_) => {}
                None => diff.added.push(entry.clone()),
            }
        }
        diff.deleted = old
            .iter()
            .filter(|e| !new_paths.contains(e.path.as_str()))
            .cloned()
            .collect();
        diff
    }
}
