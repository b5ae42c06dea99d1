//! Scripted git histories with known line ownership.
//!
//! A script is a UTF-8 document of blocks. The ground truth is computed by
//! replaying the script's explicit line operations, so it never depends on
//! diffing: every line remembers the step that wrote it.
//!
//! ```text
//! # comments start with '#'
//! name interleaved
//! default main
//!
//! [roster]
//! ana | Ana Lima | ana@example.com
//! [end]
//!
//! [commit c1]
//! author: Ana Lima <ana@example.com>
//! date: 2024-03-04T10:00:00Z
//! coauthor: Ben Ode <ben@example.com>
//! branch: main
//! message: Add app skeleton
//! insert app.py 0
//! | import os
//! | def main():
//! |     pass
//! delete app.py 2 1
//! replace app.py 1 1
//! | import sys
//! rename app.py src/app.py
//! remove notes.txt
//! [end]
//!
//! [branch feature from main]
//!
//! [merge m1]
//! from: feature
//! into: main
//! author: Ana Lima <ana@example.com>
//! date: 2024-03-05T10:00:00Z
//! message: Merge feature
//! [end]
//!
//! [checkpoint after-merge]
//! ```
//!
//! `insert P N` inserts the following `|` lines after line N (0 = top),
//! creating the file if needed. `delete P N C` removes C lines starting at
//! line N, and `replace P N C` swaps them for the following `|` lines.
//! A replacement line equal to the old one up to trailing whitespace keeps
//! its original owner.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::identity::{load_roster, Resolution, Roster, StudentId};
use crate::ingest::{open_repo, RepoHandle};

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("script line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("step {step}: {message}")]
    Step { step: String, message: String },
    #[error("destination {0} is not empty")]
    DestinationNotEmpty(PathBuf),
    #[error("git failed while building fixture: {0}")]
    Git(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub name: String,
    pub email: String,
}

impl Signature {
    fn parse(raw: &str) -> Option<Self> {
        let open = raw.find('<')?;
        let close = raw.rfind('>')?;
        let name = raw[..open].trim();
        let email = raw[open + 1..close].trim();
        (!name.is_empty() && !email.is_empty() && close > open).then(|| Self {
            name: name.to_string(),
            email: email.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineOp {
    Insert { path: String, after: usize, lines: Vec<String> },
    Delete { path: String, at: usize, count: usize },
    Replace { path: String, at: usize, count: usize, lines: Vec<String> },
    Rename { from: String, to: String },
    Remove { path: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitStep {
    pub label: String,
    pub branch: String,
    pub author: Signature,
    pub coauthors: Vec<Signature>,
    pub date: DateTime<Utc>,
    pub message: String,
    pub ops: Vec<LineOp>,
}

impl CommitStep {
    /// Commit message including `Co-authored-by` trailers.
    pub fn full_message(&self) -> String {
        let mut msg = self.message.trim_end().to_string();
        if !self.coauthors.is_empty() {
            msg.push_str("\n\n");
            for c in &self.coauthors {
                let _ = writeln!(msg, "Co-authored-by: {} <{}>", c.name, c.email);
            }
        }
        if !msg.ends_with('\n') {
            msg.push('\n');
        }
        msg
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeStep {
    pub label: String,
    pub source: String,
    pub target: String,
    pub author: Signature,
    pub date: DateTime<Utc>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Step {
    Commit(CommitStep),
    Branch { name: String, from: String },
    Merge(MergeStep),
    Checkpoint { name: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepoScript {
    pub name: String,
    pub default_branch: String,
    pub roster_document: String,
    pub roster: Roster,
    pub steps: Vec<Step>,
}

/// Base clock for steps without an explicit `date:`; each step adds an hour.
fn default_date(step_index: usize) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 4, 9, 0, 0).unwrap() + Duration::hours(step_index as i64)
}

impl RepoScript {
    pub fn parse(document: &str) -> Result<Self, ScriptError> {
        let mut name = String::from("unnamed");
        let mut default_branch = String::from("main");
        let mut roster_document = String::new();
        let mut steps = Vec::new();
        let lines: Vec<&str> = document.lines().collect();
        let mut i = 0;
        let syntax = |line: usize, message: String| ScriptError::Syntax { line: line + 1, message };

        while i < lines.len() {
            let line = lines[i].trim_end();
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                i += 1;
                continue;
            }
            if let Some(rest) = t.strip_prefix("name ") {
                name = rest.trim().to_string();
                i += 1;
                continue;
            }
            if let Some(rest) = t.strip_prefix("default ") {
                default_branch = rest.trim().to_string();
                i += 1;
                continue;
            }
            let Some(header) = t.strip_prefix('[').and_then(|h| h.strip_suffix(']')) else {
                return Err(syntax(i, format!("expected a [block] header, found {t:?}")));
            };
            let words: Vec<&str> = header.split_whitespace().collect();
            match words.as_slice() {
                ["roster"] => {
                    i += 1;
                    while i < lines.len() && lines[i].trim() != "[end]" {
                        roster_document.push_str(lines[i]);
                        roster_document.push('\n');
                        i += 1;
                    }
                    if i == lines.len() {
                        return Err(syntax(i - 1, "unterminated [roster] block".into()));
                    }
                    i += 1;
                }
                ["branch", branch, "from", from] => {
                    steps.push(Step::Branch {
                        name: branch.to_string(),
                        from: from.to_string(),
                    });
                    i += 1;
                }
                ["checkpoint", cp] => {
                    steps.push(Step::Checkpoint { name: cp.to_string() });
                    i += 1;
                }
                ["commit", label] | ["merge", label] => {
                    let is_merge = words[0] == "merge";
                    let start = i;
                    i += 1;
                    let mut headers: BTreeMap<&str, Vec<String>> = BTreeMap::new();
                    let mut ops = Vec::new();
                    while i < lines.len() && lines[i].trim() != "[end]" {
                        let raw = lines[i];
                        let t = raw.trim();
                        if t.is_empty() || t.starts_with('#') {
                            i += 1;
                            continue;
                        }
                        if let Some((key, value)) = t.split_once(':').filter(|(k, _)| {
                            matches!(*k, "author" | "date" | "coauthor" | "branch" | "message" | "from" | "into")
                        }) {
                            headers.entry(key).or_default().push(value.trim().to_string());
                            i += 1;
                            continue;
                        }
                        if is_merge {
                            return Err(syntax(i, format!("merge blocks take no operations: {t:?}")));
                        }
                        let (op, next) = parse_op(&lines, i)?;
                        ops.push(op);
                        i = next;
                    }
                    if i == lines.len() {
                        return Err(syntax(start, format!("unterminated [{header}] block")));
                    }
                    i += 1;

                    let one = |key: &str| headers.get(key).and_then(|v| v.last()).cloned();
                    let author = one("author")
                        .ok_or_else(|| syntax(start, format!("{label}: missing author")))
                        .and_then(|a| Signature::parse(&a).ok_or_else(|| syntax(start, format!("{label}: bad author {a:?}"))))?;
                    let date = match one("date") {
                        Some(d) => DateTime::parse_from_rfc3339(&d)
                            .map_err(|e| syntax(start, format!("{label}: bad date {d:?}: {e}")))?
                            .with_timezone(&Utc),
                        None => default_date(steps.len()),
                    };
                    let message = headers
                        .get("message")
                        .map(|m| m.join("\n"))
                        .unwrap_or_else(|| label.to_string());
                    if is_merge {
                        let source = one("from").ok_or_else(|| syntax(start, format!("{label}: merge needs from:")))?;
                        let target = one("into").unwrap_or_else(|| default_branch.clone());
                        steps.push(Step::Merge(MergeStep {
                            label: label.to_string(),
                            source,
                            target,
                            author,
                            date,
                            message,
                        }));
                    } else {
                        let coauthors = headers
                            .get("coauthor")
                            .map(|v| {
                                v.iter()
                                    .map(|c| Signature::parse(c).ok_or_else(|| syntax(start, format!("bad coauthor {c:?}"))))
                                    .collect::<Result<Vec<_>, _>>()
                            })
                            .transpose()?
                            .unwrap_or_default();
                        steps.push(Step::Commit(CommitStep {
                            label: label.to_string(),
                            branch: one("branch").unwrap_or_else(|| default_branch.clone()),
                            author,
                            coauthors,
                            date,
                            message,
                            ops,
                        }));
                    }
                }
                _ => return Err(syntax(i, format!("unknown block [{header}]"))),
            }
        }
        let roster = load_roster(&roster_document).map_err(|e| ScriptError::Syntax {
            line: 0,
            message: format!("embedded roster: {e}"),
        })?;
        Ok(Self {
            name,
            default_branch,
            roster_document,
            roster,
            steps,
        })
    }
}

fn parse_op(lines: &[&str], start: usize) -> Result<(LineOp, usize), ScriptError> {
    let syntax = |message: String| ScriptError::Syntax {
        line: start + 1,
        message,
    };
    let words: Vec<&str> = lines[start].split_whitespace().collect();
    let num = |s: &str| s.parse::<usize>().map_err(|_| syntax(format!("expected a number, found {s:?}")));
    let check_path = |p: &str| -> Result<String, ScriptError> {
        if p.contains(['"', '\\']) || p.starts_with('/') || p.split('/').any(|c| c.is_empty() || c == "." || c == "..") {
            Err(syntax(format!("unsupported path {p:?}")))
        } else {
            Ok(p.to_string())
        }
    };
    let mut next = start + 1;
    let mut content = Vec::new();
    while next < lines.len() {
        let raw = lines[next];
        let Some(rest) = raw.trim_start().strip_prefix('|') else { break };
        content.push(rest.strip_prefix(' ').unwrap_or(rest).to_string());
        next += 1;
    }
    let op = match words.as_slice() {
        ["insert", path, after] => LineOp::Insert {
            path: check_path(path)?,
            after: num(after)?,
            lines: content,
        },
        ["delete", path, at, count] => LineOp::Delete {
            path: check_path(path)?,
            at: num(at)?,
            count: num(count)?,
        },
        ["replace", path, at, count] => LineOp::Replace {
            path: check_path(path)?,
            at: num(at)?,
            count: num(count)?,
            lines: content,
        },
        ["rename", from, to] => LineOp::Rename {
            from: check_path(from)?,
            to: check_path(to)?,
        },
        ["remove", path] => LineOp::Remove { path: check_path(path)? },
        _ => return Err(syntax(format!("unknown operation {:?}", lines[start].trim()))),
    };
    if !content_allowed(&op) && next > start + 1 {
        return Err(syntax("operation takes no content lines".into()));
    }
    Ok((op, next))
}

fn content_allowed(op: &LineOp) -> bool {
    matches!(op, LineOp::Insert { .. } | LineOp::Replace { .. })
}

// ---------------------------------------------------------------------------
// oracle

#[derive(Debug, Clone, PartialEq, Eq)]
struct OracleLine {
    text: String,
    step: String,
}

type Files = BTreeMap<String, Vec<OracleLine>>;

#[derive(Debug, Clone, Default)]
struct BranchState {
    files: Files,
    head: Option<String>,
    ancestry: BTreeSet<String>,
    fork_base: Files,
}

fn same_text(a: &[OracleLine], b: &[OracleLine]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.text == y.text)
}

/// One line of the expected ownership at a checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthLine {
    pub path: String,
    pub line_no: usize,
    pub content: String,
    pub step: String,
    pub commit: String,
    pub author: Signature,
    pub student: Resolution,
    pub authored_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub commit: String,
    pub lines: Vec<TruthLine>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Ownership at the final head of the default branch.
    pub lines: Vec<TruthLine>,
    pub checkpoints: BTreeMap<String, Checkpoint>,
    /// `(added, deleted)` per student over commits the default branch reaches.
    pub churn: BTreeMap<String, (u64, u64)>,
    /// Roster students who neither authored nor co-authored any step.
    pub idle_students: Vec<StudentId>,
    pub commit_hashes: BTreeMap<String, String>,
}

impl GroundTruth {
    pub fn lines_of<'a>(&'a self, path: &'a str) -> impl Iterator<Item = &'a TruthLine> + 'a {
        self.lines.iter().filter(move |l| l.path == path)
    }

    pub fn owned_by(&self, student_id: &str) -> usize {
        self.lines
            .iter()
            .filter(|l| l.student.student().is_some_and(|s| s.id == student_id))
            .count()
    }
}

struct StepMeta {
    author: Signature,
    date: DateTime<Utc>,
}

/// Script replay, independent of any git or diff machinery.
struct Oracle<'s> {
    script: &'s RepoScript,
    branches: BTreeMap<String, BranchState>,
    meta: BTreeMap<String, StepMeta>,
    churn_by_step: BTreeMap<String, (u64, u64)>,
    checkpoints: Vec<(String, Files, String)>,
}

impl<'s> Oracle<'s> {
    fn run(script: &'s RepoScript) -> Result<Self, ScriptError> {
        let mut oracle = Oracle {
            script,
            branches: BTreeMap::new(),
            meta: BTreeMap::new(),
            churn_by_step: BTreeMap::new(),
            checkpoints: Vec::new(),
        };
        oracle.branches.insert(script.default_branch.clone(), BranchState::default());
        for step in &script.steps {
            oracle.apply(step)?;
        }
        Ok(oracle)
    }

    fn step_error(step: &str, message: impl Into<String>) -> ScriptError {
        ScriptError::Step {
            step: step.to_string(),
            message: message.into(),
        }
    }

    fn apply(&mut self, step: &Step) -> Result<(), ScriptError> {
        match step {
            Step::Branch { name, from } => {
                let base = self
                    .branches
                    .get(from)
                    .ok_or_else(|| Self::step_error(name, format!("unknown branch {from}")))?
                    .clone();
                if self.branches.contains_key(name) {
                    return Err(Self::step_error(name, "branch already exists"));
                }
                self.branches.insert(
                    name.clone(),
                    BranchState {
                        fork_base: base.files.clone(),
                        ..base
                    },
                );
            }
            Step::Checkpoint { name } => {
                let main = &self.branches[&self.script.default_branch];
                let head = main
                    .head
                    .clone()
                    .ok_or_else(|| Self::step_error(name, "checkpoint before the first commit"))?;
                self.checkpoints.push((name.clone(), main.files.clone(), head));
            }
            Step::Commit(c) => self.commit(c)?,
            Step::Merge(m) => self.merge(m)?,
        }
        Ok(())
    }

    fn register(&mut self, label: &str, author: &Signature, date: DateTime<Utc>) -> Result<(), ScriptError> {
        if self.meta.contains_key(label) {
            return Err(Self::step_error(label, "duplicate step label"));
        }
        self.meta.insert(
            label.to_string(),
            StepMeta {
                author: author.clone(),
                date,
            },
        );
        Ok(())
    }

    fn commit(&mut self, c: &CommitStep) -> Result<(), ScriptError> {
        self.register(&c.label, &c.author, c.date)?;
        let label = c.label.clone();
        let err = |m: String| Self::step_error(&label, m);
        let branch = self
            .branches
            .get_mut(&c.branch)
            .ok_or_else(|| err(format!("unknown branch {}", c.branch)))?;
        let new_line = |text: &String| OracleLine {
            text: text.clone(),
            step: c.label.clone(),
        };
        let (mut added, mut deleted) = (0u64, 0u64);
        for op in &c.ops {
            match op {
                LineOp::Insert { path, after, lines } => {
                    let file = branch.files.entry(path.clone()).or_default();
                    if *after > file.len() {
                        return Err(err(format!("insert after line {after} but {path} has {} lines", file.len())));
                    }
                    file.splice(after..after, lines.iter().map(new_line));
                    added += lines.len() as u64;
                }
                LineOp::Delete { path, at, count } => {
                    let file = branch.files.get_mut(path).ok_or_else(|| err(format!("no file {path}")))?;
                    if *at == 0 || at + count - 1 > file.len() {
                        return Err(err(format!("delete {at}+{count} outside {path} ({} lines)", file.len())));
                    }
                    file.drain(at - 1..at - 1 + count);
                    deleted += *count as u64;
                }
                LineOp::Replace { path, at, count, lines } => {
                    let file = branch.files.get_mut(path).ok_or_else(|| err(format!("no file {path}")))?;
                    if *at == 0 || at + count - 1 > file.len() {
                        return Err(err(format!("replace {at}+{count} outside {path} ({} lines)", file.len())));
                    }
                    let old: Vec<OracleLine> = file.drain(at - 1..at - 1 + count).collect();
                    let mut replacement = Vec::with_capacity(lines.len());
                    for (k, text) in lines.iter().enumerate() {
                        match old.get(k) {
                            Some(prev) if prev.text.trim_end() == text.trim_end() => replacement.push(OracleLine {
                                text: text.clone(),
                                step: prev.step.clone(),
                            }),
                            Some(_) => {
                                replacement.push(new_line(text));
                                added += 1;
                                deleted += 1;
                            }
                            None => {
                                replacement.push(new_line(text));
                                added += 1;
                            }
                        }
                    }
                    deleted += old.len().saturating_sub(lines.len()) as u64;
                    file.splice(at - 1..at - 1, replacement);
                }
                LineOp::Rename { from, to } => {
                    if branch.files.contains_key(to) {
                        return Err(err(format!("rename target {to} exists")));
                    }
                    let body = branch.files.remove(from).ok_or_else(|| err(format!("no file {from}")))?;
                    branch.files.insert(to.clone(), body);
                }
                LineOp::Remove { path } => {
                    let body = branch.files.remove(path).ok_or_else(|| err(format!("no file {path}")))?;
                    deleted += body.len() as u64;
                }
            }
        }
        branch.head = Some(c.label.clone());
        branch.ancestry.insert(c.label.clone());
        self.churn_by_step.insert(c.label.clone(), (added, deleted));
        Ok(())
    }

    fn merge(&mut self, m: &MergeStep) -> Result<(), ScriptError> {
        self.register(&m.label, &m.author, m.date)?;
        let err = |msg: String| Self::step_error(&m.label, msg);
        let source = self
            .branches
            .get(&m.source)
            .ok_or_else(|| err(format!("unknown branch {}", m.source)))?
            .clone();
        let target = self
            .branches
            .get(&m.target)
            .ok_or_else(|| err(format!("unknown branch {}", m.target)))?
            .clone();
        if target.head.is_none() || source.head.is_none() {
            return Err(err("both branches need a commit before merging".into()));
        }
        let base = &source.fork_base;
        let paths: BTreeSet<&String> = base.keys().chain(source.files.keys()).chain(target.files.keys()).collect();
        let mut merged = Files::new();
        for path in paths {
            let (b, s, t) = (base.get(path), source.files.get(path), target.files.get(path));
            let changed = |x: Option<&Vec<OracleLine>>| match (b, x) {
                (None, None) => false,
                (Some(b), Some(x)) => !same_text(b, x),
                _ => true,
            };
            let pick = match (changed(s), changed(t)) {
                (true, true) => {
                    let identical = match (s, t) {
                        (Some(s), Some(t)) => same_text(s, t),
                        (None, None) => true,
                        _ => false,
                    };
                    if !identical {
                        return Err(err(format!("conflicting changes to {path}")));
                    }
                    t
                }
                (true, false) => s,
                _ => t,
            };
            if let Some(lines) = pick {
                merged.insert(path.clone(), lines.clone());
            }
        }
        let tgt = self.branches.get_mut(&m.target).expect("checked");
        tgt.files = merged.clone();
        tgt.head = Some(m.label.clone());
        tgt.ancestry.extend(source.ancestry.iter().cloned());
        tgt.ancestry.insert(m.label.clone());
        self.branches.get_mut(&m.source).expect("checked").fork_base = merged;
        Ok(())
    }

    fn truth_lines(&self, files: &Files, hashes: &BTreeMap<String, String>) -> Vec<TruthLine> {
        let mut out = Vec::new();
        for (path, lines) in files {
            for (i, l) in lines.iter().enumerate() {
                let meta = &self.meta[&l.step];
                out.push(TruthLine {
                    path: path.clone(),
                    line_no: i + 1,
                    content: l.text.clone(),
                    step: l.step.clone(),
                    commit: hashes.get(&l.step).cloned().unwrap_or_default(),
                    author: meta.author.clone(),
                    student: self.script.roster.resolve(&meta.author.name, &meta.author.email),
                    authored_at: meta.date,
                });
            }
        }
        out
    }

    fn ground_truth(&self, hashes: &BTreeMap<String, String>) -> GroundTruth {
        let main = &self.branches[&self.script.default_branch];
        let roster = &self.script.roster;
        let mut churn: BTreeMap<String, (u64, u64)> = roster.students().map(|s| (s.id.clone(), (0, 0))).collect();
        let mut involved = BTreeSet::new();
        for step in &self.script.steps {
            if let Step::Commit(c) = step {
                let who = roster.resolve(&c.author.name, &c.author.email).or_unmapped();
                involved.insert(who.id.clone());
                for co in &c.coauthors {
                    if let Resolution::Student(s) = roster.resolve(&co.name, &co.email) {
                        involved.insert(s.id);
                    }
                }
                if main.ancestry.contains(&c.label) {
                    let (a, d) = self.churn_by_step[&c.label];
                    let e = churn.entry(who.id).or_default();
                    e.0 += a;
                    e.1 += d;
                }
            }
        }
        GroundTruth {
            lines: self.truth_lines(&main.files, hashes),
            checkpoints: self
                .checkpoints
                .iter()
                .map(|(name, files, head)| {
                    (
                        name.clone(),
                        Checkpoint {
                            commit: hashes.get(head).cloned().unwrap_or_default(),
                            lines: self.truth_lines(files, hashes),
                        },
                    )
                })
                .collect(),
            churn,
            idle_students: roster.students().filter(|s| !involved.contains(&s.id)).cloned().collect(),
            commit_hashes: hashes.clone(),
        }
    }
}

/// Ground truth from the script alone; commit hashes are left empty.
pub fn script_truth(script: &RepoScript) -> Result<GroundTruth, ScriptError> {
    Ok(Oracle::run(script)?.ground_truth(&BTreeMap::new()))
}

// ---------------------------------------------------------------------------
// builder

fn git_cmd(dir: &Path) -> Command {
    let mut cmd = Command::new("git");
    cmd.arg("-C")
        .arg(dir)
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("GIT_CONFIG_GLOBAL", "/dev/null")
        .env("LC_ALL", "C")
        .env_remove("GIT_DIR")
        .env_remove("GIT_WORK_TREE")
        .env_remove("GIT_INDEX_FILE");
    cmd
}

fn git_ok(dir: &Path, args: &[&str]) -> Result<(), ScriptError> {
    let out = git_cmd(dir).args(args).stdin(Stdio::null()).output()?;
    if !out.status.success() {
        return Err(ScriptError::Git(format!(
            "git {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    Ok(())
}

fn file_bytes(lines: &[OracleLine]) -> Vec<u8> {
    let mut out = Vec::new();
    for l in lines {
        out.extend_from_slice(l.text.as_bytes());
        out.push(b'\n');
    }
    out
}

fn push_data(stream: &mut Vec<u8>, data: &[u8]) {
    stream.extend_from_slice(format!("data {}\n", data.len()).as_bytes());
    stream.extend_from_slice(data);
    stream.push(b'\n');
}

/// Builds the scripted repository in `destination` (missing or empty) and
/// returns it opened on the default branch, with its ground truth.
pub fn build(script: &RepoScript, destination: &Path) -> Result<(RepoHandle, GroundTruth), ScriptError> {
    if destination.exists() && std::fs::read_dir(destination)?.next().is_some() {
        return Err(ScriptError::DestinationNotEmpty(destination.to_path_buf()));
    }
    std::fs::create_dir_all(destination)?;

    // Replay once to validate and to materialize per-step trees.
    let mut oracle = Oracle {
        script,
        branches: BTreeMap::new(),
        meta: BTreeMap::new(),
        churn_by_step: BTreeMap::new(),
        checkpoints: Vec::new(),
    };
    oracle.branches.insert(script.default_branch.clone(), BranchState::default());

    let mut stream = Vec::new();
    let mut marks: BTreeMap<String, usize> = BTreeMap::new();
    let mut branch_tip: BTreeMap<String, Option<usize>> = BTreeMap::new();
    branch_tip.insert(script.default_branch.clone(), None);

    for step in &script.steps {
        oracle.apply(step)?;
        let (label, branch, author, date, message, merge_from) = match step {
            Step::Branch { name, from } => {
                let tip = branch_tip.get(from).copied().flatten();
                branch_tip.insert(name.clone(), tip);
                continue;
            }
            Step::Checkpoint { .. } => continue,
            Step::Commit(c) => (&c.label, &c.branch, &c.author, c.date, c.full_message(), None),
            Step::Merge(m) => (
                &m.label,
                &m.target,
                &m.author,
                m.date,
                format!("{}\n", m.message.trim_end()),
                Some(&m.source),
            ),
        };
        let mark = marks.len() + 1;
        marks.insert(label.clone(), mark);
        let ts = date.timestamp();
        let _ = write!(
            Stream(&mut stream),
            "commit refs/heads/{branch}\nmark :{mark}\nauthor {} <{}> {ts} +0000\ncommitter {} <{}> {ts} +0000\n",
            author.name,
            author.email,
            author.name,
            author.email
        );
        push_data(&mut stream, message.as_bytes());
        if let Some(parent) = branch_tip.get(branch).copied().flatten() {
            let _ = writeln!(Stream(&mut stream), "from :{parent}");
        }
        if let Some(source) = merge_from {
            let side = branch_tip
                .get(source)
                .copied()
                .flatten()
                .ok_or_else(|| ScriptError::Step {
                    step: label.clone(),
                    message: format!("branch {source} has no commits"),
                })?;
            let _ = writeln!(Stream(&mut stream), "merge :{side}");
        }
        stream.extend_from_slice(b"deleteall\n");
        for (path, lines) in &oracle.branches[branch].files {
            let _ = writeln!(Stream(&mut stream), "M 100644 inline {path}");
            push_data(&mut stream, &file_bytes(lines));
        }
        branch_tip.insert(branch.clone(), Some(mark));
    }

    git_ok(destination, &["init", "-q", "-b", &script.default_branch])?;
    let marks_file = destination.join(".git").join("fixture-marks");
    let marks_arg = format!("--export-marks={}", marks_file.display());
    let mut child = git_cmd(destination)
        .args(["fast-import", "--quiet", "--done", &marks_arg])
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()?;
    {
        let mut stdin = child.stdin.take().expect("piped stdin");
        stream.extend_from_slice(b"done\n");
        stdin.write_all(&stream)?;
    }
    let out = child.wait_with_output()?;
    if !out.status.success() {
        return Err(ScriptError::Git(format!(
            "fast-import: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    let mark_hashes: BTreeMap<usize, String> = std::fs::read_to_string(&marks_file)?
        .lines()
        .filter_map(|l| {
            let (m, h) = l.split_once(' ')?;
            Some((m.trim_start_matches(':').parse().ok()?, h.to_string()))
        })
        .collect();
    std::fs::remove_file(&marks_file)?;
    let hashes: BTreeMap<String, String> = marks
        .iter()
        .filter_map(|(label, m)| Some((label.clone(), mark_hashes.get(m)?.clone())))
        .collect();

    if branch_tip.get(&script.default_branch).copied().flatten().is_some() {
        git_ok(destination, &["reset", "-q", "--hard", &script.default_branch])?;
    }
    let repo = open_repo(destination, Some(&script.default_branch)).map_err(|e| ScriptError::Git(e.to_string()))?;
    Ok((repo, oracle.ground_truth(&hashes)))
}

/// `fmt::Write` adapter over the fast-import byte stream.
struct Stream<'a>(&'a mut Vec<u8>);

impl std::fmt::Write for Stream<'_> {
    fn write_str(&mut self, s: &str) -> std::fmt::Result {
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
}

/// A named script shipped with the crate.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub name: &'static str,
    pub script: RepoScript,
    pub truth: GroundTruth,
}

const SUITE: &[(&str, &str)] = &[
    ("sole-author", include_str!("../fixtures/sole-author.script")),
    ("interleaved-edits", include_str!("../fixtures/interleaved-edits.script")),
    ("rename", include_str!("../fixtures/rename.script")),
    ("merge", include_str!("../fixtures/merge.script")),
    ("co-authored", include_str!("../fixtures/co-authored.script")),
    ("comment-injection", include_str!("../fixtures/comment-injection.script")),
    ("unmerged-branch", include_str!("../fixtures/unmerged-branch.script")),
    ("zero-commit", include_str!("../fixtures/zero-commit.script")),
    ("whitespace-only", include_str!("../fixtures/whitespace-only.script")),
    ("generated-files", include_str!("../fixtures/generated-files.script")),
    ("unknown-author", include_str!("../fixtures/unknown-author.script")),
    ("erased-work", include_str!("../fixtures/erased-work.script")),
    ("john-doe", include_str!("../fixtures/john-doe.script")),
];

/// Every shipped fixture with its script-level truth (hashes unresolved
/// until [`build`]).
pub fn standard_suite() -> Vec<Fixture> {
    SUITE
        .iter()
        .map(|(name, doc)| {
            let script = RepoScript::parse(doc).unwrap_or_else(|e| panic!("fixture {name}: {e}"));
            let truth = script_truth(&script).unwrap_or_else(|e| panic!("fixture {name}: {e}"));
            Fixture { name, script, truth }
        })
        .collect()
}

pub fn fixture(name: &str) -> Option<Fixture> {
    standard_suite().into_iter().find(|f| f.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "name small\n[roster]\nana | Ana | ana@x.com\nben | Ben | ben@x.com\n[end]\n\
[commit c1]\nauthor: Ana <ana@x.com>\ndate: 2024-03-04T10:00:00Z\nmessage: start\ninsert a.py 0\n| one\n| two\n| three\n[end]\n\
[commit c2]\nauthor: Ben <ben@x.com>\ndate: 2024-03-04T11:00:00Z\nmessage: edit\nreplace a.py 2 1\n| TWO\ninsert a.py 3\n| four\n[end]\n";

    #[test]
    fn oracle_tracks_line_owners() {
        let script = RepoScript::parse(SMALL).unwrap();
        let truth = script_truth(&script).unwrap();
        let steps: Vec<_> = truth.lines.iter().map(|l| (l.content.as_str(), l.step.as_str())).collect();
        assert_eq!(steps, vec![("one", "c1"), ("TWO", "c2"), ("three", "c1"), ("four", "c2")]);
        assert_eq!(truth.churn["ana"], (3, 0));
        assert_eq!(truth.churn["ben"], (2, 1));
        assert!(truth.idle_students.is_empty());
    }

    #[test]
    fn script_errors_name_the_step() {
        let bad = SMALL.replace("replace a.py 2 1", "replace a.py 9 1");
        let script = RepoScript::parse(&bad).unwrap();
        match script_truth(&script) {
            Err(ScriptError::Step { step, .. }) => assert_eq!(step, "c2"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            RepoScript::parse("[commit x]\nmessage: no author\n[end]\n"),
            Err(ScriptError::Syntax { .. })
        ));
        assert!(matches!(RepoScript::parse("[bogus]\n"), Err(ScriptError::Syntax { .. })));
    }

    #[test]
    fn conflicting_merge_is_rejected() {
        let doc = format!(
            "{SMALL}[branch f from main]\n\
[commit c3]\nauthor: Ana <ana@x.com>\nbranch: f\nreplace a.py 1 1\n| uno\n[end]\n\
[commit c4]\nauthor: Ben <ben@x.com>\nreplace a.py 1 1\n| eins\n[end]\n\
[merge m]\nfrom: f\nauthor: Ana <ana@x.com>\n[end]\n"
        );
        let script = RepoScript::parse(&doc).unwrap();
        assert!(matches!(script_truth(&script), Err(ScriptError::Step { step, .. }) if step == "m"));
    }

    #[test]
    fn suite_parses() {
        let suite = standard_suite();
        assert!(suite.len() >= 10);
        let zero = suite.iter().find(|f| f.name == "zero-commit").unwrap();
        assert_eq!(zero.truth.idle_students.len(), 1);
    }

    #[test]
    fn build_is_reproducible() {
        let script = RepoScript::parse(SMALL).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (repo_a, truth_a) = build(&script, a.path()).unwrap();
        let (repo_b, truth_b) = build(&script, b.path()).unwrap();
        assert_eq!(repo_a.head_ref(), repo_b.head_ref());
        assert_eq!(truth_a, truth_b);
        assert_eq!(truth_a.commit_hashes.len(), 2);
        assert!(truth_a.lines.iter().all(|l| l.commit.len() == 40));
        assert!(a.path().join("a.py").is_file());
    }

    #[test]
    fn refuses_non_empty_destination() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x"), "x").unwrap();
        let script = RepoScript::parse(SMALL).unwrap();
        assert!(matches!(build(&script, dir.path()), Err(ScriptError::DestinationNotEmpty(_))));
    }
}
