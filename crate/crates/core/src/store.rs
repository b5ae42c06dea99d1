//! On-disk response cache and cost ledger.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::TierKind;

pub const STATE_ENV: &str = "CONTRIBSUM_STATE";

const ENTRY_MAGIC: &str = "contribsum-cache-v1";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cache entry {key} is corrupt: {detail}")]
    CorruptEntry { key: String, detail: String },
    #[error("ledger {path} line {line}: {message}")]
    BadLedger { path: PathBuf, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// State directory: `$CONTRIBSUM_STATE` when set, else `fallback`.
pub fn state_dir(fallback: &Path) -> PathBuf {
    match std::env::var_os(STATE_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => fallback.to_path_buf(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn new(commit_scope: &str, template_hash: &str, model_id: &str, payload: &[u8]) -> Self {
        let mut h = Sha256::new();
        // length-prefixed so field boundaries cannot shift
        for field in [commit_scope.as_bytes(), template_hash.as_bytes(), model_id.as_bytes()] {
            h.update((field.len() as u64).to_le_bytes());
            h.update(field);
        }
        h.update(Sha256::digest(payload));
        Self(hex::encode(h.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Content-addressed cache rooted at `<state>/cache`.
#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    warnings: Mutex<Vec<String>>,
}

impl Store {
    pub fn open(state_dir: &Path) -> Result<Self, StoreError> {
        let root = state_dir.join("cache");
        fs::create_dir_all(&root).map_err(io_err(&root))?;
        Ok(Self {
            root,
            warnings: Mutex::new(Vec::new()),
        })
    }

    fn entry_path(&self, key: &CacheKey) -> PathBuf {
        let k = key.as_str();
        self.root.join(&k[..2]).join(&k[2..4]).join(k)
    }

    /// Cached payload, or `None`. Corrupt entries read as absent and leave a
    /// warning behind.
    pub fn get(&self, key: &CacheKey) -> Result<Option<Vec<u8>>, StoreError> {
        let path = self.entry_path(key);
        let raw = match fs::read(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(io_err(&path)(e)),
        };
        match decode_entry(key, &raw) {
            Ok(payload) => Ok(Some(payload)),
            Err(e) => {
                log::warn!("{e}");
                self.warnings.lock().expect("warnings lock").push(e.to_string());
                Ok(None)
            }
        }
    }

    pub fn put(&self, key: &CacheKey, payload: &[u8]) -> Result<(), StoreError> {
        let path = self.entry_path(key);
        let dir = path.parent().expect("fanout dir");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut body = format!("{ENTRY_MAGIC} {}\n", sha256_hex(payload)).into_bytes();
        body.extend_from_slice(payload);
        let tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
        fs::write(tmp.path(), &body).map_err(io_err(tmp.path()))?;
        tmp.persist(&path).map_err(|e| io_err(&path)(e.error))?;
        Ok(())
    }

    /// Warnings raised by corrupt entries since the store was opened.
    pub fn warnings(&self) -> Vec<String> {
        self.warnings.lock().expect("warnings lock").clone()
    }
}

fn decode_entry(key: &CacheKey, raw: &[u8]) -> Result<Vec<u8>, StoreError> {
    let corrupt = |detail: &str| StoreError::CorruptEntry {
        key: key.as_str().to_string(),
        detail: detail.to_string(),
    };
    let nl = raw.iter().position(|b| *b == b'\n').ok_or_else(|| corrupt("missing header"))?;
    let header = std::str::from_utf8(&raw[..nl]).map_err(|_| corrupt("header is not UTF-8"))?;
    let digest = header
        .strip_prefix(ENTRY_MAGIC)
        .map(str::trim)
        .ok_or_else(|| corrupt("unknown header"))?;
    let payload = &raw[nl + 1..];
    if sha256_hex(payload) != digest {
        return Err(corrupt("digest mismatch"));
    }
    Ok(payload.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub timestamp: DateTime<Utc>,
    pub run_id: String,
    pub tier: TierKind,
    pub model_id: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TierTotals {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost: f64,
}

impl TierTotals {
    fn add(&mut self, e: &LedgerEntry) {
        self.calls += 1;
        self.input_tokens += e.input_tokens;
        self.output_tokens += e.output_tokens;
        self.cost += e.cost;
    }
}

/// Append-only cost ledger, optionally backed by a JSONL file.
#[derive(Debug, Default)]
pub struct CostLedger {
    path: Option<PathBuf>,
    entries: Vec<LedgerEntry>,
    totals: BTreeMap<TierKind, TierTotals>,
}

impl CostLedger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `<state>/ledger.jsonl`, creating the state directory if needed.
    pub fn open(state_dir: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(state_dir).map_err(io_err(state_dir))?;
        let path = state_dir.join("ledger.jsonl");
        let mut ledger = Self {
            path: Some(path.clone()),
            ..Self::default()
        };
        let file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ledger),
            Err(e) => return Err(io_err(&path)(e)),
        };
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LedgerEntry = serde_json::from_str(&line).map_err(|e| StoreError::BadLedger {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            ledger.push(entry);
        }
        Ok(ledger)
    }

    fn push(&mut self, entry: LedgerEntry) {
        self.totals.entry(entry.tier).or_default().add(&entry);
        self.entries.push(entry);
    }

    pub fn append(&mut self, entry: LedgerEntry) -> Result<(), StoreError> {
        if let Some(path) = &self.path {
            let mut line = serde_json::to_string(&entry).expect("ledger entry serializes");
            line.push('\n');
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io_err(path))?;
            f.write_all(line.as_bytes()).map_err(io_err(path))?;
            f.flush().map_err(io_err(path))?;
        }
        self.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn tier_totals(&self, tier: TierKind) -> TierTotals {
        self.totals.get(&tier).copied().unwrap_or_default()
    }

    pub fn total_cost(&self) -> f64 {
        self.totals.values().map(|t| t.cost).sum()
    }
}

fn money(v: f64) -> String {
    format!("${v:.4}")
}

/// Per-run and cumulative totals as plain text.
pub fn ledger_report(ledger: &CostLedger) -> String {
    let mut out = String::new();
    let mut runs: BTreeMap<&str, TierTotals> = BTreeMap::new();
    for e in ledger.entries() {
        runs.entry(e.run_id.as_str()).or_default().add(e);
    }
    out.push_str("Runs\n");
    if runs.is_empty() {
        out.push_str("  (none)\n");
    }
    for (run, t) in &runs {
        let _ = writeln!(out, "  {run:<24} {:>6} calls  {:>10}", t.calls, money(t.cost));
    }
    out.push_str("\nCumulative\n");
    let _ = writeln!(
        out,
        "  {:<10} {:>6} {:>14} {:>14} {:>10}",
        "tier", "calls", "input_tokens", "output_tokens", "cost"
    );
    let mut grand = TierTotals::default();
    for tier in [TierKind::Analysis, TierKind::Synthesis] {
        let t = ledger.tier_totals(tier);
        grand.calls += t.calls;
        grand.input_tokens += t.input_tokens;
        grand.output_tokens += t.output_tokens;
        grand.cost += t.cost;
        let _ = writeln!(
            out,
            "  {:<10} {:>6} {:>14} {:>14} {:>10}",
            tier.to_string(),
            t.calls,
            t.input_tokens,
            t.output_tokens,
            money(t.cost)
        );
    }
    let _ = writeln!(
        out,
        "  {:<10} {:>6} {:>14} {:>14} {:>10}",
        "total",
        grand.calls,
        grand.input_tokens,
        grand.output_tokens,
        money(grand.cost)
    );
    out
}
