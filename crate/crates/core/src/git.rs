//! Thin read-only wrapper over the `git` executable.
//!
//! Everything here talks to the object store through plumbing commands
//! (`rev-parse`, `rev-list`, `ls-tree`, `cat-file --batch`). Nothing writes
//! to the repository: every invocation passes `--no-optional-locks` and
//! upward discovery is fenced off with `GIT_CEILING_DIRECTORIES`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};

#[derive(Debug, thiserror::Error)]
pub enum GitError {
    #[error("failed to run git: {0}")]
    Spawn(#[from] std::io::Error),
    #[error("git {args} failed: {stderr}")]
    Failed { args: String, stderr: String },
    #[error("malformed git output: {0}")]
    Parse(String),
    #[error("object {0} not found")]
    Missing(String),
}

/// Process handle for one repository directory.
#[derive(Debug, Clone)]
pub(crate) struct Git {
    dir: PathBuf,
}

impl Git {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    fn command(&self) -> Command {
        let mut cmd = Command::new("git");
        cmd.arg("--no-optional-locks").arg("-C").arg(&self.dir);
        if let Some(parent) = self.dir.parent() {
            cmd.env("GIT_CEILING_DIRECTORIES", parent);
        }
        cmd.env("LC_ALL", "C")
            .env("GIT_CONFIG_NOSYSTEM", "1")
            .env_remove("GIT_DIR")
            .env_remove("GIT_WORK_TREE")
            .env_remove("GIT_INDEX_FILE");
        cmd
    }

    pub fn run(&self, args: &[&str]) -> Result<Vec<u8>, GitError> {
        let out = self.command().args(args).stdin(Stdio::null()).output()?;
        if !out.status.success() {
            return Err(GitError::Failed {
                args: args.join(" "),
                stderr: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        Ok(out.stdout)
    }

    pub fn run_text(&self, args: &[&str]) -> Result<String, GitError> {
        let bytes = self.run(args)?;
        Ok(String::from_utf8_lossy(&bytes).trim_end().to_string())
    }

    /// `Ok(None)` when git exits non-zero; used for existence probes.
    pub fn probe(&self, args: &[&str]) -> Result<Option<String>, GitError> {
        match self.run_text(args) {
            Ok(s) => Ok(Some(s)),
            Err(GitError::Failed { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn resolve_commit(&self, rev: &str) -> Result<Option<String>, GitError> {
        let spec = format!("{rev}^{{commit}}");
        self.probe(&["rev-parse", "--verify", "--quiet", &spec])
    }

    /// `ls-tree -r -l` of a tree-ish: blobs only, submodules and symlinks skipped.
    pub fn ls_tree(&self, treeish: &str) -> Result<Vec<TreeEntry>, GitError> {
        let out = self.run(&["ls-tree", "-r", "-l", "-z", "--full-tree", treeish])?;
        let mut entries = Vec::new();
        for record in out.split(|b| *b == 0).filter(|r| !r.is_empty()) {
            let tab = record
                .iter()
                .position(|b| *b == b'\t')
                .ok_or_else(|| GitError::Parse("ls-tree record without tab".into()))?;
            let meta = String::from_utf8_lossy(&record[..tab]);
            let path = String::from_utf8_lossy(&record[tab + 1..]).into_owned();
            let mut fields = meta.split_whitespace();
            let (mode, kind, oid, size) = (fields.next(), fields.next(), fields.next(), fields.next());
            let (Some(mode), Some(kind), Some(oid), Some(size)) = (mode, kind, oid, size) else {
                return Err(GitError::Parse(format!("ls-tree record {meta:?}")));
            };
            if kind != "blob" || mode == "120000" {
                continue;
            }
            let size = size
                .parse::<u64>()
                .map_err(|_| GitError::Parse(format!("blob size {size:?}")))?;
            entries.push(TreeEntry {
                path,
                oid: oid.to_string(),
                size,
            });
        }
        entries.sort_by(|a, b| a.path.as_bytes().cmp(b.path.as_bytes()));
        Ok(entries)
    }

    pub fn object_reader(&self) -> Result<ObjectReader, GitError> {
        ObjectReader::spawn(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct TreeEntry {
    pub path: String,
    pub oid: String,
    pub size: u64,
}

/// A long-lived `git cat-file --batch` process answering one request at a time.
pub(crate) struct ObjectReader {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    cache: HashMap<String, Arc<Vec<u8>>>,
}

impl ObjectReader {
    fn spawn(git: &Git) -> Result<Self, GitError> {
        let mut child = git
            .command()
            .args(["cat-file", "--batch"])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            child,
            stdin,
            stdout,
            cache: HashMap::new(),
        })
    }

    /// Returns `(type, content)` of an object, or `GitError::Missing`.
    pub fn read(&mut self, oid: &str) -> Result<(String, Arc<Vec<u8>>), GitError> {
        writeln!(self.stdin, "{oid}")?;
        self.stdin.flush()?;
        let mut header = String::new();
        self.stdout.read_line(&mut header)?;
        let header = header.trim_end();
        if header.ends_with(" missing") || header.ends_with(" ambiguous") || header.is_empty() {
            return Err(GitError::Missing(oid.to_string()));
        }
        let mut parts = header.split(' ');
        let (_, kind, size) = (parts.next(), parts.next(), parts.next());
        let (Some(kind), Some(size)) = (kind, size) else {
            return Err(GitError::Parse(format!("cat-file header {header:?}")));
        };
        let size: usize = size
            .parse()
            .map_err(|_| GitError::Parse(format!("cat-file size {size:?}")))?;
        let mut buf = vec![0u8; size + 1];
        self.stdout.read_exact(&mut buf)?;
        buf.pop();
        Ok((kind.to_string(), Arc::new(buf)))
    }

    pub fn blob(&mut self, oid: &str) -> Result<Arc<Vec<u8>>, GitError> {
        if let Some(hit) = self.cache.get(oid) {
            return Ok(hit.clone());
        }
        let (kind, data) = self.read(oid)?;
        if kind != "blob" {
            return Err(GitError::Parse(format!("{oid} is a {kind}, expected blob")));
        }
        self.cache.insert(oid.to_string(), data.clone());
        Ok(data)
    }

    pub fn commit(&mut self, oid: &str) -> Result<RawCommit, GitError> {
        let (kind, data) = self.read(oid)?;
        if kind != "commit" {
            return Err(GitError::Missing(oid.to_string()));
        }
        RawCommit::parse(oid, &data)
    }
}

impl Drop for ObjectReader {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A decoded commit object.
#[derive(Debug, Clone)]
pub(crate) struct RawCommit {
    pub hash: String,
    pub tree: String,
    pub parents: Vec<String>,
    pub author_name: String,
    pub author_email: String,
    pub authored_at: DateTime<Utc>,
    pub message: String,
}

impl RawCommit {
    pub fn parse(hash: &str, data: &[u8]) -> Result<Self, GitError> {
        let text = String::from_utf8_lossy(data);
        let (headers, message) = match text.find("\n\n") {
            Some(i) => (&text[..i], &text[i + 2..]),
            None => (text.as_ref(), ""),
        };
        let mut tree = None;
        let mut parents = Vec::new();
        let mut author = None;
        for line in headers.lines() {
            if let Some(rest) = line.strip_prefix("tree ") {
                tree = Some(rest.to_string());
            } else if let Some(rest) = line.strip_prefix("parent ") {
                parents.push(rest.to_string());
            } else if let Some(rest) = line.strip_prefix("author ") {
                author = Some(parse_signature(rest)?);
            }
        }
        let tree = tree.ok_or_else(|| GitError::Parse(format!("commit {hash} without tree")))?;
        let (author_name, author_email, authored_at) =
            author.ok_or_else(|| GitError::Parse(format!("commit {hash} without author")))?;
        Ok(Self {
            hash: hash.to_string(),
            tree,
            parents,
            author_name,
            author_email,
            authored_at,
            message: message.to_string(),
        })
    }
}

/// Parses `Name <email> 1700000000 +0100`.
fn parse_signature(raw: &str) -> Result<(String, String, DateTime<Utc>), GitError> {
    let bad = || GitError::Parse(format!("signature {raw:?}"));
    let open = raw.find('<').ok_or_else(bad)?;
    let close = raw[open..].find('>').ok_or_else(bad)? + open;
    let name = raw[..open].trim().to_string();
    let email = raw[open + 1..close].trim().to_string();
    let mut tail = raw[close + 1..].split_whitespace();
    let secs: i64 = tail.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let at = Utc.timestamp_opt(secs, 0).single().ok_or_else(bad)?;
    Ok((name, email, at))
}

pub(crate) fn is_git_dir(path: &Path) -> bool {
    path.join("HEAD").is_file() && path.join("objects").is_dir()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_commit_object() {
        let raw = b"tree 4b825dc642cb6eb9a060e54bf8d69288fbee4904\n\
parent 1111111111111111111111111111111111111111\n\
parent 2222222222222222222222222222222222222222\n\
author Ana Lima <ana@x.com> 1709542800 -0300\n\
committer Ana Lima <ana@x.com> 1709542800 -0300\n\
\n\
Merge branch 'auth'\n\nCo-authored-by: Ben <ben@x.com>\n";
        let c = RawCommit::parse("abc", raw).unwrap();
        assert_eq!(c.parents.len(), 2);
        assert_eq!(c.author_name, "Ana Lima");
        assert_eq!(c.author_email, "ana@x.com");
        assert_eq!(c.authored_at.timestamp(), 1709542800);
        assert!(c.message.starts_with("Merge branch 'auth'"));
        assert!(c.message.contains("Co-authored-by"));
    }

    #[test]
    fn rejects_signature_without_email() {
        assert!(parse_signature("Nobody 12345 +0000").is_err());
    }
}
