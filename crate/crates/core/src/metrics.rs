//! Per-file measures: sizes, line counts, cyclomatic complexity for Python
//! scripts and notebooks, opening-tag counts for HTML.
//!
//! Complexity is computed from a token stream rather than a syntax tree so
//! half-finished code still gets a score. A function's score is one plus the
//! decision points whose logical line sits directly in that function (nested
//! functions keep their own). Decision points are the tokens `if`, `elif`,
//! `for`, `while`, `except`, `and`, `or`, plus `case` arms of a `match`.
//! Counting every `if`/`for` token covers conditional expressions and
//! comprehension clauses along with the statements.

use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("malformed notebook: {0}")]
    MalformedNotebook(String),
}

/// Bytes inspected by the binary sniff.
const SNIFF_BYTES: usize = 8 * 1024;

/// Separator placed between notebook code cells before scoring.
pub const CELL_MARKER: &str = "# %% ---- cell boundary ----";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    Script,
    Notebook,
    Markup,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineSpan {
    pub start: usize,
    pub end: usize,
}

impl LineSpan {
    pub fn contains(&self, line: usize) -> bool {
        self.start <= line && line <= self.end
    }

    pub fn contains_span(&self, other: &LineSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn lines(&self) -> RangeInclusive<usize> {
        self.start..=self.end
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSpan {
    pub name: String,
    pub span: LineSpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionComplexity {
    pub name: String,
    pub span: LineSpan,
    pub score: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub functions: Vec<FunctionComplexity>,
    pub file_score: u32,
    /// Set when the tokenizer had to recover from broken input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileMetrics {
    pub path: String,
    pub byte_size: u64,
    pub line_count: u64,
    pub kind: FileKind,
    pub complexity: Option<ComplexityReport>,
    pub tag_count: Option<u64>,
}

impl FileMetrics {
    pub fn compute(path: &str, content: &[u8]) -> Self {
        let kind = classify_file(path, content);
        let text = String::from_utf8_lossy(content);
        let line_count = if kind == FileKind::Other && looks_binary(content) {
            0
        } else {
            text.lines().count() as u64
        };
        let complexity = match kind {
            FileKind::Script => Some(cyclomatic(&text)),
            FileKind::Notebook => Some(notebook_complexity(&text).unwrap_or_else(|e| ComplexityReport {
                functions: Vec::new(),
                file_score: 1,
                warning: Some(e.to_string()),
            })),
            _ => None,
        };
        let tag_count = (kind == FileKind::Markup).then(|| tag_count(&text));
        Self {
            path: path.to_string(),
            byte_size: content.len() as u64,
            line_count,
            kind,
            complexity,
            tag_count,
        }
    }
}

pub fn looks_binary(content: &[u8]) -> bool {
    content[..content.len().min(SNIFF_BYTES)].contains(&0)
}

fn extension(path: &str) -> Option<String> {
    Path::new(path)
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
}

pub fn classify_file(path: &str, content: &[u8]) -> FileKind {
    if looks_binary(content) {
        return FileKind::Other;
    }
    match extension(path).as_deref() {
        Some("py") => FileKind::Script,
        Some("ipynb") => FileKind::Notebook,
        Some("html" | "htm") => FileKind::Markup,
        _ => FileKind::Other,
    }
}

/// Whether `line` is a comment in the language implied by `path`.
pub fn is_comment_line(path: &str, line: &str) -> bool {
    let t = line.trim();
    if t.is_empty() {
        return false;
    }
    match extension(path).as_deref() {
        Some("py" | "sh" | "rb" | "yml" | "yaml" | "toml" | "r" | "pl") => t.starts_with('#'),
        Some("ipynb") => t.trim_start_matches('"').trim_start().starts_with('#'),
        Some("html" | "htm" | "xml" | "md") => t.starts_with("<!--") && t.ends_with("-->"),
        Some("css" | "scss") => t.starts_with("/*") || t.starts_with('*'),
        Some("js" | "jsx" | "ts" | "tsx" | "java" | "c" | "h" | "cpp" | "hpp" | "cs" | "go" | "rs" | "kt" | "swift") => {
            t.starts_with("//") || t.starts_with("/*") || t.starts_with('*')
        }
        Some("sql" | "lua") => t.starts_with("--"),
        _ => false,
    }
}

// ---------------------------------------------------------------------------
// tokenizer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Name(String),
    Op(char),
    Str,
    Num,
}

#[derive(Debug)]
struct LogicalLine {
    first: usize,
    last: usize,
    indent: usize,
    tokens: Vec<Tok>,
}

#[derive(Debug, Default)]
struct Tokenized {
    lines: Vec<LogicalLine>,
    warning: Option<String>,
}

fn is_string_prefix(ident: &str) -> bool {
    ident.len() <= 2
        && ident
            .chars()
            .all(|c| matches!(c.to_ascii_lowercase(), 'r' | 'b' | 'u' | 'f'))
}

fn tokenize(source: &str) -> Tokenized {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Tokenized::default();
    let mut i = 0;
    let mut line = 1;
    let mut depth: usize = 0;
    let mut current: Option<LogicalLine> = None;
    let mut at_line_start = true;
    let mut indent = 0;

    let warn = |out: &mut Tokenized, msg: String| {
        out.warning.get_or_insert(msg);
    };

    while i < chars.len() {
        let c = chars[i];
        if at_line_start {
            indent = 0;
            while i < chars.len() && (chars[i] == ' ' || chars[i] == '\t' || chars[i] == '\x0c') {
                indent = if chars[i] == '\t' { (indent / 8 + 1) * 8 } else { indent + 1 };
                i += 1;
            }
            at_line_start = false;
            continue;
        }
        match c {
            '\n' => {
                if depth == 0 {
                    if let Some(l) = current.take() {
                        out.lines.push(l);
                    }
                }
                line += 1;
                i += 1;
                if current.is_none() {
                    at_line_start = true;
                }
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '\\' if chars.get(i + 1) == Some(&'\n') => {
                line += 1;
                i += 2;
            }
            '\\' if chars.get(i + 1) == Some(&'\r') && chars.get(i + 2) == Some(&'\n') => {
                line += 1;
                i += 3;
            }
            c if c.is_whitespace() => i += 1,
            '"' | '\'' => {
                let start_line = line;
                let (next, lines_crossed, ok) = scan_string(&chars, i);
                if !ok {
                    warn(&mut out, format!("unterminated string starting on line {start_line}"));
                }
                push_token(&mut current, start_line, indent, Tok::Str);
                line += lines_crossed;
                if let Some(l) = current.as_mut() {
                    l.last = line;
                }
                i = next;
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let ident: String = chars[start..i].iter().collect();
                if i < chars.len() && (chars[i] == '"' || chars[i] == '\'') && is_string_prefix(&ident) {
                    continue; // the quote branch picks up the literal
                }
                push_token(&mut current, line, indent, Tok::Name(ident));
            }
            c if c.is_ascii_digit() => {
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                    i += 1;
                }
                push_token(&mut current, line, indent, Tok::Num);
            }
            '(' | '[' | '{' => {
                depth += 1;
                push_token(&mut current, line, indent, Tok::Op(c));
                i += 1;
            }
            ')' | ']' | '}' => {
                if depth == 0 {
                    warn(&mut out, format!("unbalanced '{c}' on line {line}"));
                } else {
                    depth -= 1;
                }
                push_token(&mut current, line, indent, Tok::Op(c));
                i += 1;
            }
            _ => {
                push_token(&mut current, line, indent, Tok::Op(c));
                i += 1;
            }
        }
    }
    if depth > 0 {
        warn(&mut out, "unclosed bracket at end of input".into());
    }
    if let Some(l) = current.take() {
        out.lines.push(l);
    }
    out
}

fn push_token(current: &mut Option<LogicalLine>, line: usize, indent: usize, tok: Tok) {
    let l = current.get_or_insert_with(|| LogicalLine {
        first: line,
        last: line,
        indent,
        tokens: Vec::new(),
    });
    l.last = line;
    l.tokens.push(tok);
}

/// Scans a string literal starting at the opening quote. Returns the index
/// after it, the number of newlines consumed and whether it was terminated.
fn scan_string(chars: &[char], start: usize) -> (usize, usize, bool) {
    let quote = chars[start];
    let triple = chars.get(start + 1) == Some(&quote) && chars.get(start + 2) == Some(&quote);
    let mut i = if triple { start + 3 } else { start + 1 };
    let mut newlines = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\\' {
            if chars.get(i + 1) == Some(&'\n') {
                newlines += 1;
            }
            i += 2;
            continue;
        }
        if c == '\n' {
            if !triple {
                // unterminated single-line literal: stop before the newline
                return (i, newlines, false);
            }
            newlines += 1;
        }
        if c == quote {
            if !triple {
                return (i + 1, newlines, true);
            }
            if chars.get(i + 1) == Some(&quote) && chars.get(i + 2) == Some(&quote) {
                return (i + 3, newlines, true);
            }
        }
        i += 1;
    }
    (chars.len(), newlines, false)
}

// ---------------------------------------------------------------------------
// structure

struct Scanned {
    tokenized: Tokenized,
    functions: Vec<FunctionSpan>,
}

fn def_name(tokens: &[Tok]) -> Option<String> {
    let rest = match tokens.first()? {
        Tok::Name(n) if n == "def" => &tokens[1..],
        Tok::Name(n) if n == "async" && matches!(tokens.get(1), Some(Tok::Name(d)) if d == "def") => &tokens[2..],
        _ => return None,
    };
    match rest.first() {
        Some(Tok::Name(name)) => Some(name.clone()),
        _ => Some("<anonymous>".into()),
    }
}

fn scan(source: &str) -> Scanned {
    let tokenized = tokenize(source);
    let lines = &tokenized.lines;
    let mut functions = Vec::new();
    for (idx, l) in lines.iter().enumerate() {
        let Some(name) = def_name(&l.tokens) else { continue };
        let mut end = l.last;
        for body in &lines[idx + 1..] {
            if body.indent <= l.indent {
                break;
            }
            end = body.last;
        }
        functions.push(FunctionSpan {
            name,
            span: LineSpan { start: l.first, end },
        });
    }
    Scanned { tokenized, functions }
}

/// Index of the innermost function whose span holds `line`.
fn innermost(functions: &[FunctionSpan], line: usize) -> Option<usize> {
    functions
        .iter()
        .enumerate()
        .filter(|(_, f)| f.span.contains(line))
        .max_by_key(|(_, f)| f.span.start)
        .map(|(i, _)| i)
}

fn decision_points(l: &LogicalLine) -> u32 {
    let mut count = l
        .tokens
        .iter()
        .filter(|t| matches!(t, Tok::Name(n) if matches!(n.as_str(), "if" | "elif" | "for" | "while" | "except" | "and" | "or")))
        .count() as u32;
    let case_arm = matches!(l.tokens.first(), Some(Tok::Name(n)) if n == "case")
        && l.tokens.len() > 2
        && l.tokens.last() == Some(&Tok::Op(':'))
        && !matches!(l.tokens.get(1), Some(Tok::Op('=' | '.' | '(' | '[' | ',' | ')')));
    if case_arm {
        count += 1;
    }
    count
}

/// Statements that do not count as top-level logic: imports, decorators,
/// class headers, docstrings and `pass`.
fn is_structural(l: &LogicalLine) -> bool {
    match l.tokens.first() {
        Some(Tok::Name(n)) if matches!(n.as_str(), "import" | "from" | "class" | "pass") => true,
        Some(Tok::Op('@')) => true,
        Some(Tok::Str) => l.tokens.iter().all(|t| *t == Tok::Str),
        Some(Tok::Op('.')) => l.tokens.iter().all(|t| *t == Tok::Op('.')),
        _ => false,
    }
}

pub fn cyclomatic(source: &str) -> ComplexityReport {
    let Scanned { tokenized, functions } = scan(source);
    if tokenized.lines.is_empty() && !source.trim().is_empty() {
        return ComplexityReport {
            functions: Vec::new(),
            file_score: 1,
            warning: Some(
                tokenized
                    .warning
                    .unwrap_or_else(|| "no statements could be segmented".into()),
            ),
        };
    }
    let mut scores = vec![1u32; functions.len()];
    let mut top_level = false;
    for l in &tokenized.lines {
        match innermost(&functions, l.first) {
            Some(f) => scores[f] += decision_points(l),
            None => top_level |= !is_structural(l),
        }
    }
    let functions: Vec<FunctionComplexity> = functions
        .into_iter()
        .zip(scores)
        .map(|(f, score)| FunctionComplexity {
            name: f.name,
            span: f.span,
            score,
        })
        .collect();
    let file_score = (functions.iter().map(|f| f.score).sum::<u32>() + u32::from(top_level)).max(1);
    ComplexityReport {
        functions,
        file_score,
        warning: tokenized.warning,
    }
}

/// Function definitions with their line extents; nested definitions are
/// listed after their enclosing function.
pub fn function_spans(source: &str) -> Vec<FunctionSpan> {
    scan(source).functions
}

/// Index of the innermost span holding `line`, for callers that already
/// hold a span list.
pub fn innermost_span(spans: &[FunctionSpan], line: usize) -> Option<usize> {
    innermost(spans, line)
}

/// Code cells of a notebook joined in order, separated by [`CELL_MARKER`].
pub fn notebook_script(document: &str) -> Result<String, MetricsError> {
    let value: serde_json::Value =
        serde_json::from_str(document).map_err(|e| MetricsError::MalformedNotebook(e.to_string()))?;
    let cells = value
        .get("cells")
        .and_then(|c| c.as_array())
        .ok_or_else(|| MetricsError::MalformedNotebook("missing \"cells\" array".into()))?;
    let mut sources = Vec::new();
    for (n, cell) in cells.iter().enumerate() {
        if cell.get("cell_type").and_then(|t| t.as_str()) != Some("code") {
            continue;
        }
        let source = match cell.get("source") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Array(parts)) => parts
                .iter()
                .map(|p| {
                    p.as_str()
                        .ok_or_else(|| MetricsError::MalformedNotebook(format!("cell {n}: non-string source line")))
                })
                .collect::<Result<String, _>>()?,
            None => String::new(),
            Some(_) => return Err(MetricsError::MalformedNotebook(format!("cell {n}: bad source"))),
        };
        sources.push(source);
    }
    let mut script = String::new();
    for (n, source) in sources.iter().enumerate() {
        if n > 0 {
            if !script.ends_with('\n') {
                script.push('\n');
            }
            script.push_str(CELL_MARKER);
            script.push('\n');
        }
        script.push_str(source);
    }
    Ok(script)
}

pub fn notebook_complexity(document: &str) -> Result<ComplexityReport, MetricsError> {
    Ok(cyclomatic(&notebook_script(document)?))
}

/// Opening and self-closing tags; comments, declarations and closing tags
/// are skipped, as is the raw text inside `<script>` and `<style>`.
pub fn tag_count(markup: &str) -> u64 {
    let bytes = markup.as_bytes();
    let lower = markup.to_ascii_lowercase();
    let mut count = 0;
    let mut i = 0;
    while let Some(off) = markup[i..].find('<') {
        i += off;
        let rest = &markup[i..];
        if rest.starts_with("<!--") {
            i = match markup[i + 4..].find("-->") {
                Some(end) => i + 4 + end + 3,
                None => markup.len(),
            };
            continue;
        }
        if rest.starts_with("<!") || rest.starts_with("<?") || rest.starts_with("</") {
            i = match rest.find('>') {
                Some(end) => i + end + 1,
                None => markup.len(),
            };
            continue;
        }
        if !bytes.get(i + 1).is_some_and(|b| b.is_ascii_alphabetic()) {
            i += 1;
            continue;
        }
        let name_end = rest[1..]
            .find(|c: char| c.is_whitespace() || c == '>' || c == '/')
            .map_or(rest.len(), |e| e + 1);
        let name = rest[1..name_end].to_ascii_lowercase();
        let Some(close) = find_tag_end(&rest[name_end..]) else {
            // unterminated tag: not counted
            i += 1;
            continue;
        };
        let tag_end = i + name_end + close;
        count += 1;
        let self_closing = markup[..tag_end].trim_end().ends_with('/');
        i = tag_end + 1;
        if !self_closing && (name == "script" || name == "style") {
            let closing = format!("</{name}");
            i = match lower[i..].find(&closing) {
                Some(pos) => i + pos,
                None => markup.len(),
            };
        }
    }
    count
}

/// Offset of the `>` ending a tag's attribute section, honouring quotes.
fn find_tag_end(attrs: &str) -> Option<usize> {
    let mut quote: Option<char> = None;
    for (pos, c) in attrs.char_indices() {
        match (quote, c) {
            (Some(q), c) if c == q => quote = None,
            (Some(_), _) => {}
            (None, '"' | '\'') => quote = Some(c),
            (None, '>') => return Some(pos),
            (None, '<') => return None,
            _ => {}
        }
    }
    None
}
